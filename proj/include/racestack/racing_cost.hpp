#pragma once

#include <array>
#include <cmath>

#include "racestack/model.hpp"
#include "racestack/vehicle_params.hpp"

namespace racestack {

/// Cost weights shared by the trajectory optimizer and the online controller.
struct TroWeights {
  double q_beta = 5.0;     // slip-angle consistency weight
  double R_dF_M = 1e-7;    // [1/(N/s)^2]
  double R_ddelta = 5.0;   // [1/(rad/s)^2]
  double R_M_tv = 1e-6;    // [1/(N m)^2]
};

/// Slip-angle cost B(x) = q_beta (beta_dyn - beta_kin)^2 with
/// beta_kin = atan(delta l_R / (l_F + l_R)), beta_dyn = atan(v_y / v_x).
inline double slip_cost(const State7& x, double q_beta, const VehicleParams& p,
                        std::array<double, 7>* grad = nullptr) {
  const double vg = std::max(x[iVX], p.v_min);
  const double dvg = x[iVX] > p.v_min ? 1.0 : 0.0;
  const double q = x[iVY] / vg;
  const double k = x[iDELTA] * p.l_R / p.wheelbase();
  const double beta_dyn = std::atan(q);
  const double beta_kin = std::atan(k);
  const double e = beta_dyn - beta_kin;
  if (grad) {
    const double ce = 2.0 * q_beta * e;
    (*grad)[iVY] += ce / ((1.0 + q * q) * vg);
    (*grad)[iVX] += ce * (-x[iVY] / (vg * vg)) / (1.0 + q * q) * dvg;
    (*grad)[iDELTA] -= ce * (p.l_R / p.wheelbase()) / (1.0 + k * k);
  }
  return q_beta * e * e;
}

/// Racing stage cost J = -sdot + q_n n^2 + u^T R u + B(x); q_n = 0 recovers
/// the trajectory-optimization cost. Gradients are accumulated into the
/// provided arrays. The progress-rate denominator is clamped like the
/// solver-facing dynamics so iterates outside the guard stay finite.
inline double stage_cost(const State7& x, const Input3& u, double kappa, double q_n,
                         const VehicleParams& p, const TroWeights& w,
                         std::array<double, 7>* gx = nullptr,
                         std::array<double, 3>* gu = nullptr) {
  double den = 1.0 - x[iN] * kappa;
  bool clamped = false;
  if (std::abs(den) < 0.05) {
    den = den < 0.0 ? -0.05 : 0.05;
    clamped = true;
  }
  const double cmu = std::cos(x[iMU]), smu = std::sin(x[iMU]);
  const double sdot = (x[iVX] * cmu - x[iVY] * smu) / den;

  double cost = -sdot + q_n * x[iN] * x[iN];
  cost += w.R_dF_M * u[0] * u[0] + w.R_ddelta * u[1] * u[1] + w.R_M_tv * u[2] * u[2];

  if (gx) {
    if (!clamped) (*gx)[iN] += -sdot * kappa / den + 2.0 * q_n * x[iN];
    else (*gx)[iN] += 2.0 * q_n * x[iN];
    (*gx)[iMU] += -(-x[iVX] * smu - x[iVY] * cmu) / den;
    (*gx)[iVX] += -cmu / den;
    (*gx)[iVY] += smu / den;
  }
  if (gu) {
    (*gu)[0] += 2.0 * w.R_dF_M * u[0];
    (*gu)[1] += 2.0 * w.R_ddelta * u[1];
    (*gu)[2] += 2.0 * w.R_M_tv * u[2];
  }
  cost += slip_cost(x, w.q_beta, p, gx);
  return cost;
}

inline double stage_cost_tro(const State7& x, const Input3& u, double kappa,
                             const VehicleParams& p, const TroWeights& w) {
  return stage_cost(x, u, kappa, 0.0, p, w);
}

inline double stage_cost_mpc(const State7& x, const Input3& u, double kappa,
                             double q_n, const VehicleParams& p, const TroWeights& w) {
  return stage_cost(x, u, kappa, q_n, p, w);
}

}  // namespace racestack
