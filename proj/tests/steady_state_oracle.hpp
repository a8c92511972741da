#pragma once

// Independent steady-state cornering oracle for circular tracks.
//
// On a circle the optimal periodic solution is stationary in s, so the TRO
// optimum can be computed directly: scan (n, v_x, mu), close the remaining
// algebra exactly (vy from ndot = 0, r from mudot = 0, delta/F_M from the
// force balance, M_tv from the yaw balance), keep feasible candidates and
// minimize the same stage cost the optimizer uses. No NLP machinery involved.

#include <cmath>
#include <optional>

#include "racestack/constraints.hpp"
#include "racestack/model.hpp"
#include "racestack/racing_cost.hpp"

namespace steady_oracle {

struct Candidate {
  racestack::State7 x;
  racestack::Input3 u;
  double sdot = 0.0;
  double cost = 0.0;
};

// Solves delta so the lateral force balance holds for fixed (n, vx, mu).
inline std::optional<Candidate> close_steady_state(double n, double vx, double mu,
                                                   double kappa, double N_L, double N_R,
                                                   const racestack::VehicleParams& p,
                                                   const racestack::TroWeights& w,
                                                   double tv_cap) {
  using namespace racestack;
  const double vy = -vx * std::tan(mu);
  const double den = 1.0 - n * kappa;
  if (den <= 0.05) return std::nullopt;
  const double sdot = vx / (std::cos(mu) * den);
  if (!(sdot > 0.1)) return std::nullopt;
  const double r = kappa * sdot;

  const double vg = std::max(vx, p.v_min);
  const NormalLoads nl = normal_loads(vx, p);
  const double alpha_R = -std::atan((vy - p.l_R * r) / vg);
  const double F_yR = nl.rear * pacejka_lateral(alpha_R, p);
  const double P = p.m * vx * r - F_yR;
  const double Ffric = p.C_r + p.C_d * vx * vx;

  auto FM_of = [&](double delta, double F_yF) {
    return (F_yF * std::sin(delta) - p.m * vy * r + Ffric) / (1.0 + std::cos(delta));
  };
  auto h_of = [&](double delta) {
    const double alpha_F = delta - std::atan((vy + p.l_F * r) / vg);
    const double F_yF = nl.front * pacejka_lateral(alpha_F, p);
    return FM_of(delta, F_yF) * std::sin(delta) + F_yF * std::cos(delta) - P;
  };

  // Bracket a sign change of h over the steering box, then bisect.
  const int scan = 64;
  double lo = -p.delta_max, hi = p.delta_max;
  double h_lo = h_of(lo);
  bool found = false;
  for (int i = 1; i <= scan; ++i) {
    const double d = -p.delta_max + 2.0 * p.delta_max * i / scan;
    const double h_d = h_of(d);
    if (h_lo == 0.0 || h_lo * h_d <= 0.0) {
      hi = d;
      found = true;
      break;
    }
    lo = d;
    h_lo = h_d;
  }
  if (!found) return std::nullopt;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double hm = h_of(mid);
    if (h_lo * hm <= 0.0)
      hi = mid;
    else {
      lo = mid;
      h_lo = hm;
    }
  }
  const double delta = 0.5 * (lo + hi);
  const double alpha_F = delta - std::atan((vy + p.l_F * r) / vg);
  const double F_yF = nl.front * pacejka_lateral(alpha_F, p);
  const double FM = FM_of(delta, F_yF);
  const double M_tv = F_yR * p.l_R - P * p.l_F;

  Candidate c;
  c.x = {n, mu, vx, vy, r, FM, delta};
  c.u = {0.0, 0.0, M_tv};
  c.sdot = sdot;

  // Feasibility: track + ellipse + boxes (with the configured TV cap).
  const TrackResiduals tr = track_residuals(n, mu, N_L, N_R, p);
  if (tr.g_L > 0.0 || tr.g_R > 0.0) return std::nullopt;
  const EllipseResiduals el = ellipse_residuals(c.x, p);
  if (el.g_F > 0.0 || el.g_R > 0.0) return std::nullopt;
  if (std::abs(FM) > p.F_M_max || std::abs(M_tv) > tv_cap) return std::nullopt;

  c.cost = stage_cost_tro(c.x, c.u, kappa, p, w);
  return c;
}

/// Grid scan with refinement. kappa > 0 corresponds to a CCW circle, where
/// the inside of the corner is n > 0.
inline Candidate best_steady_state(double kappa, double N_L, double N_R,
                                   const racestack::VehicleParams& p,
                                   const racestack::TroWeights& w,
                                   double tv_cap) {
  Candidate best;
  best.cost = 1e300;
  double n_c = 0.0, n_half = std::max(N_L, N_R);
  double v_c = 15.0, v_half = 14.0;
  double mu_c = 0.0, mu_half = 0.25;
  const int grid = 21;
  for (int level = 0; level < 5; ++level) {
    Candidate level_best = best;
    for (int i = 0; i < grid; ++i) {
      const double n = n_c - n_half + 2.0 * n_half * i / (grid - 1);
      for (int j = 0; j < grid; ++j) {
        const double vx = v_c - v_half + 2.0 * v_half * j / (grid - 1);
        if (vx < 1.5) continue;
        for (int k = 0; k < grid; ++k) {
          const double mu = mu_c - mu_half + 2.0 * mu_half * k / (grid - 1);
          const auto cand =
              close_steady_state(n, vx, mu, kappa, N_L, N_R, p, w, tv_cap);
          if (cand && cand->cost < level_best.cost) level_best = *cand;
        }
      }
    }
    best = level_best;
    n_c = best.x[racestack::iN];
    v_c = best.x[racestack::iVX];
    mu_c = best.x[racestack::iMU];
    n_half *= 0.2;
    v_half *= 0.2;
    mu_half *= 0.2;
  }
  return best;
}

}  // namespace steady_oracle
