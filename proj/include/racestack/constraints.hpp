#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "racestack/model.hpp"
#include "racestack/vehicle_params.hpp"

namespace racestack {

// Feasible iff every residual <= 0.
struct TrackResiduals {
  double g_L, g_R;
};

/// Heading-dependent footprint constraint against the track edges.
/// Exact variant uses |mu|, the smooth variant sqrt(mu^2 + eps^2).
inline TrackResiduals track_residuals(double n, double mu, double N_L, double N_R,
                                      const VehicleParams& p) {
  const double lat = p.L_c * std::sin(std::abs(mu)) + p.W_c * std::cos(mu);
  return {n + lat - N_L, -n + lat - N_R};
}

constexpr double kTrackSmoothEps = 1e-3;

inline TrackResiduals track_residuals_smooth(double n, double mu, double N_L,
                                             double N_R, const VehicleParams& p,
                                             double* dmu = nullptr) {
  const double sm = std::sqrt(mu * mu + kTrackSmoothEps * kTrackSmoothEps);
  const double lat = p.L_c * std::sin(sm) + p.W_c * std::cos(mu);
  if (dmu)
    *dmu = p.L_c * std::cos(sm) * (mu / sm) - p.W_c * std::sin(mu);
  return {n + lat - N_L, -n + lat - N_R};
}

struct EllipseResiduals {
  double g_F, g_R;  // [N^2]
};

/// Friction-ellipse residual per axle: (rho_long F_M)^2 + F_y^2 - (lambda D F_N)^2
/// with the bound force taken as the axle's speed-dependent peak lateral force.
inline EllipseResiduals ellipse_residuals(const State7& x, const VehicleParams& p) {
  const TireForces t = tire_forces(x, p);
  const double boundF = p.lambda * p.pac_D * t.loads.front;
  const double boundR = p.lambda * p.pac_D * t.loads.rear;
  const double drive2 = sqr(p.rho_long * x[iFM]);
  return {drive2 + sqr(t.F_yF) - sqr(boundF), drive2 + sqr(t.F_yR) - sqr(boundR)};
}

/// Static (v_x = 0) ellipse bounds used to normalize the residuals to O(1).
inline void ellipse_scales(const VehicleParams& p, double& front, double& rear) {
  const double mg = p.m * p.g;
  front = sqr(p.lambda * p.pac_D * mg * p.l_R / p.wheelbase());
  rear = sqr(p.lambda * p.pac_D * mg * p.l_F / p.wheelbase());
}

/// Normalized ellipse residuals with partials w.r.t. the reduced state.
/// Rows: [front, rear]; columns follow the State7 layout.
inline void ellipse_residuals_normalized(const State7& x, const VehicleParams& p,
                                         double& gF, double& gR,
                                         std::array<double, 7>* dF = nullptr,
                                         std::array<double, 7>* dR = nullptr) {
  const TireForces t = tire_forces(x, p);
  double scF, scR;
  ellipse_scales(p, scF, scR);
  const double lamD = p.lambda * p.pac_D;
  const double boundF = lamD * t.loads.front;
  const double boundR = lamD * t.loads.rear;
  const double drive2 = sqr(p.rho_long * x[iFM]);
  gF = (drive2 + sqr(t.F_yF) - sqr(boundF)) / scF;
  gR = (drive2 + sqr(t.F_yR) - sqr(boundR)) / scR;
  if (!dF) return;
  dF->fill(0.0);
  dR->fill(0.0);
  // columns: vx, vy, r, delta via tire partials; F_M direct.
  const int cols[4] = {iVX, iVY, iR, iDELTA};
  for (int k = 0; k < 4; ++k) {
    (*dF)[cols[k]] = 2.0 * t.F_yF * t.dF_yF[k] / scF;
    (*dR)[cols[k]] = 2.0 * t.F_yR * t.dF_yR[k] / scR;
  }
  (*dF)[iVX] -= 2.0 * sqr(lamD) * t.loads.front * t.loads.dfront_dvx / scF;
  (*dR)[iVX] -= 2.0 * sqr(lamD) * t.loads.rear * t.loads.drear_dvx / scR;
  (*dF)[iFM] = 2.0 * sqr(p.rho_long) * x[iFM] / scF;
  (*dR)[iFM] = 2.0 * sqr(p.rho_long) * x[iFM] / scR;
}

/// Signed box residuals for the extended input a = [F_M, delta, dF_M, ddelta, M_tv]:
/// max(a - a_max, a_min - a), negative inside, zero on the boundary.
inline std::array<double, 5> box_residuals(const std::array<double, 5>& a,
                                           const VehicleParams& p) {
  const double hi[5] = {p.F_M_max, p.delta_max, p.dF_M_max, p.ddelta_max, p.M_tv_max};
  std::array<double, 5> out;
  for (int i = 0; i < 5; ++i) out[i] = std::max(a[i] - hi[i], -hi[i] - a[i]);
  return out;
}

/// Worst normalized constraint violation over one (state, input) stage:
/// track residuals in meters, ellipse residuals normalized by the static
/// bound, box residuals normalized by the box half-width.
struct StageCheck {
  double track = -1e300;
  double ellipse = -1e300;
  double box = -1e300;
  double worst() const { return std::max({track, ellipse, box}); }
};

inline StageCheck check_stage(const State7& x, const Input3& u, double N_L,
                              double N_R, const VehicleParams& p) {
  StageCheck c;
  const TrackResiduals tr = track_residuals(x[iN], x[iMU], N_L, N_R, p);
  c.track = std::max(tr.g_L, tr.g_R);
  double gF, gR;
  ellipse_residuals_normalized(x, p, gF, gR);
  c.ellipse = std::max(gF, gR);
  const auto box = box_residuals({x[iFM], x[iDELTA], u[0], u[1], u[2]}, p);
  const double halfw[5] = {p.F_M_max, p.delta_max, p.dF_M_max, p.ddelta_max,
                           std::max(p.M_tv_max, 1e-9)};
  c.box = box[0] / halfw[0];
  for (int i = 1; i < 5; ++i) c.box = std::max(c.box, box[i] / halfw[i]);
  return c;
}

}  // namespace racestack
