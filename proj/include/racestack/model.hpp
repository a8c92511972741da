#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "racestack/geometry.hpp"
#include "racestack/vehicle_params.hpp"

namespace racestack {

/// Full curvilinear state [s, n, mu, v_x, v_y, r, F_M, delta].
struct CurvState {
  double s = 0.0;      // progress [m]
  double n = 0.0;      // lateral deviation, left positive [m]
  double mu = 0.0;     // local heading [rad]
  double v_x = 0.0;    // longitudinal velocity [m/s]
  double v_y = 0.0;    // lateral velocity [m/s]
  double r = 0.0;      // yaw rate, CCW positive [rad/s]
  double F_M = 0.0;    // motor force per axle (lifted input) [N]
  double delta = 0.0;  // steering angle (lifted input) [rad]
};

struct ModelInput {
  double dF_M = 0.0;    // motor force rate [N/s]
  double ddelta = 0.0;  // steering rate [rad/s]
  double M_tv = 0.0;    // torque vectoring yaw moment [N m]
};

// Reduced spatial/MPC state [n, mu, v_x, v_y, r, F_M, delta].
using State7 = std::array<double, 7>;
using Input3 = std::array<double, 3>;
using Mat7x7 = std::array<double, 49>;  // row-major
using Mat7x3 = std::array<double, 21>;

enum : int { iN = 0, iMU = 1, iVX = 2, iVY = 3, iR = 4, iFM = 5, iDELTA = 6 };

inline State7 reduce(const CurvState& x) {
  return {x.n, x.mu, x.v_x, x.v_y, x.r, x.F_M, x.delta};
}
inline CurvState expand(const State7& x, double s = 0.0) {
  return {s, x[iN], x[iMU], x[iVX], x[iVY], x[iR], x[iFM], x[iDELTA]};
}
inline Input3 to_array(const ModelInput& u) { return {u.dF_M, u.ddelta, u.M_tv}; }

struct SingularityError : std::runtime_error {
  SingularityError(double n_kappa_value)
      : std::runtime_error("curvilinear singularity guard violated: n*kappa = " +
                           std::to_string(n_kappa_value)),
        n_kappa(n_kappa_value) {}
  double n_kappa;
};

struct NonForwardProgressError : std::runtime_error {
  NonForwardProgressError(double sdot_value)
      : std::runtime_error("spatial model requires forward progress, got sdot = " +
                           std::to_string(sdot_value)),
        sdot(sdot_value) {}
  double sdot;
};

inline double pacejka_lateral(double alpha, const VehicleParams& p) {
  return p.pac_D * std::sin(p.pac_C * std::atan(p.pac_B * alpha));
}
inline double pacejka_lateral_deriv(double alpha, const VehicleParams& p) {
  const double ba = p.pac_B * alpha;
  return p.pac_D * std::cos(p.pac_C * std::atan(ba)) * p.pac_C * p.pac_B / (1.0 + ba * ba);
}

/// Axle normal loads including aerodynamic downforce.
struct NormalLoads {
  double net;    // m g + C_l v_x^2
  double front;  // net * l_R / (l_F + l_R)
  double rear;   // net * l_F / (l_F + l_R)
  double dfront_dvx;
  double drear_dvx;
};

inline NormalLoads normal_loads(double v_x, const VehicleParams& p) {
  NormalLoads nl;
  nl.net = p.m * p.g + p.C_l * v_x * v_x;
  const double wb = p.wheelbase();
  nl.front = nl.net * p.l_R / wb;
  nl.rear = nl.net * p.l_F / wb;
  const double dnet = 2.0 * p.C_l * v_x;
  nl.dfront_dvx = dnet * p.l_R / wb;
  nl.drear_dvx = dnet * p.l_F / wb;
  return nl;
}

/// Front/rear slip angles. Divisions by v_x are guarded with max(v_x, v_min).
/// Positive slip angle produces positive (leftward) lateral force, so the
/// lateral dynamics are restoring.
inline void slip_angles(const State7& x, const VehicleParams& p, double& alpha_F,
                        double& alpha_R) {
  const double vg = std::max(x[iVX], p.v_min);
  alpha_F = x[iDELTA] - std::atan((x[iVY] + p.l_F * x[iR]) / vg);
  alpha_R = -std::atan((x[iVY] - p.l_R * x[iR]) / vg);
}

/// Tire forces plus the partials needed by the analytic Jacobians.
struct TireForces {
  double alpha_F, alpha_R;
  double F_yF, F_yR;
  NormalLoads loads;
  // partials with respect to (v_x, v_y, r, delta)
  std::array<double, 4> dF_yF{};
  std::array<double, 4> dF_yR{};
};

inline TireForces tire_forces(const State7& x, const VehicleParams& p) {
  TireForces t;
  t.loads = normal_loads(x[iVX], p);
  const double vg = std::max(x[iVX], p.v_min);
  const double dvg = x[iVX] > p.v_min ? 1.0 : 0.0;

  const double qF = (x[iVY] + p.l_F * x[iR]) / vg;
  const double qR = (x[iVY] - p.l_R * x[iR]) / vg;
  t.alpha_F = x[iDELTA] - std::atan(qF);
  t.alpha_R = -std::atan(qR);

  const double muF = pacejka_lateral(t.alpha_F, p);
  const double muR = pacejka_lateral(t.alpha_R, p);
  t.F_yF = t.loads.front * muF;
  t.F_yR = t.loads.rear * muR;

  const double dmuF = pacejka_lateral_deriv(t.alpha_F, p);
  const double dmuR = pacejka_lateral_deriv(t.alpha_R, p);
  const double gF = 1.0 / (1.0 + qF * qF);  // d atan
  const double gR = 1.0 / (1.0 + qR * qR);

  // alpha partials
  const double daF_dvx = gF * qF / vg * dvg;  // -datan(qF)/dvx = -gF * dqF/dvx
  const double daF_dvy = -gF / vg;
  const double daF_dr = -gF * p.l_F / vg;
  const double daF_dd = 1.0;
  const double daR_dvx = gR * qR / vg * dvg;
  const double daR_dvy = -gR / vg;
  const double daR_dr = gR * p.l_R / vg;

  t.dF_yF = {t.loads.dfront_dvx * muF + t.loads.front * dmuF * daF_dvx,
             t.loads.front * dmuF * daF_dvy, t.loads.front * dmuF * daF_dr,
             t.loads.front * dmuF * daF_dd};
  t.dF_yR = {t.loads.drear_dvx * muR + t.loads.rear * dmuR * daR_dvx,
             t.loads.rear * dmuR * daR_dvy, t.loads.rear * dmuR * daR_dr, 0.0};
  return t;
}

inline void lateral_forces(const State7& x, const VehicleParams& p, double& F_yF,
                           double& F_yR) {
  const TireForces t = tire_forces(x, p);
  F_yF = t.F_yF;
  F_yR = t.F_yR;
}

/// Time-domain derivative of the reduced state with all partials.
struct Deriv7 {
  State7 f{};                     // [ndot, mudot, vxdot, vydot, rdot, FMdot, deltadot]
  double sdot = 0.0;
  std::array<double, 7> dsdot{};  // d sdot / d x
  Mat7x7 J_x{};                   // d f / d x
  Mat7x3 J_u{};                   // d f / d u
};

enum class Guard { strict, clamped };

/// Evaluates the curvilinear bicycle dynamics at frozen curvature kappa.
/// Guard::strict enforces the singularity precondition |1 - n kappa| > 0.05;
/// Guard::clamped saturates the denominator instead (used inside solver
/// callbacks, which must stay finite on infeasible iterates).
inline void eval_time_dynamics(const State7& x, const Input3& u, double kappa,
                               const VehicleParams& p, Deriv7& out, bool want_jac,
                               Guard guard = Guard::strict) {
  double den = 1.0 - x[iN] * kappa;
  if (guard == Guard::strict) {
    if (std::abs(den) <= 0.05) throw SingularityError(x[iN] * kappa);
  } else if (std::abs(den) < 0.05) {
    den = den < 0.0 ? -0.05 : 0.05;
  }

  const double cmu = std::cos(x[iMU]), smu = std::sin(x[iMU]);
  const double cd = std::cos(x[iDELTA]), sd = std::sin(x[iDELTA]);
  const TireForces t = tire_forces(x, p);
  const double F_fric = p.C_r + p.C_d * x[iVX] * x[iVX];

  out.sdot = (x[iVX] * cmu - x[iVY] * smu) / den;
  out.f[iN] = x[iVX] * smu + x[iVY] * cmu;
  out.f[iMU] = x[iR] - kappa * out.sdot;
  out.f[iVX] =
      (x[iFM] * (1.0 + cd) - t.F_yF * sd + p.m * x[iVY] * x[iR] - F_fric) / p.m;
  out.f[iVY] = (t.F_yR + x[iFM] * sd + t.F_yF * cd - p.m * x[iVX] * x[iR]) / p.m;
  out.f[iR] =
      ((x[iFM] * sd + t.F_yF * cd) * p.l_F - t.F_yR * p.l_R + u[2]) / p.I_z;
  out.f[iFM] = u[0];
  out.f[iDELTA] = u[1];

  if (!want_jac) return;

  out.dsdot.fill(0.0);
  out.dsdot[iN] = out.sdot * kappa / den;
  out.dsdot[iMU] = (-x[iVX] * smu - x[iVY] * cmu) / den;
  out.dsdot[iVX] = cmu / den;
  out.dsdot[iVY] = -smu / den;

  out.J_x.fill(0.0);
  out.J_u.fill(0.0);
  auto X = [&](int row, int col) -> double& { return out.J_x[row * 7 + col]; };
  auto U = [&](int row, int col) -> double& { return out.J_u[row * 3 + col]; };

  X(iN, iMU) = x[iVX] * cmu - x[iVY] * smu;
  X(iN, iVX) = smu;
  X(iN, iVY) = cmu;

  for (int j = 0; j < 7; ++j) X(iMU, j) = -kappa * out.dsdot[j];
  X(iMU, iR) += 1.0;

  X(iVX, iVX) = (-t.dF_yF[0] * sd - 2.0 * p.C_d * x[iVX]) / p.m;
  X(iVX, iVY) = (-t.dF_yF[1] * sd + p.m * x[iR]) / p.m;
  X(iVX, iR) = (-t.dF_yF[2] * sd + p.m * x[iVY]) / p.m;
  X(iVX, iFM) = (1.0 + cd) / p.m;
  X(iVX, iDELTA) = (-x[iFM] * sd - t.dF_yF[3] * sd - t.F_yF * cd) / p.m;

  X(iVY, iVX) = (t.dF_yR[0] + t.dF_yF[0] * cd - p.m * x[iR]) / p.m;
  X(iVY, iVY) = (t.dF_yR[1] + t.dF_yF[1] * cd) / p.m;
  X(iVY, iR) = (t.dF_yR[2] + t.dF_yF[2] * cd - p.m * x[iVX]) / p.m;
  X(iVY, iFM) = sd / p.m;
  X(iVY, iDELTA) = (x[iFM] * cd + t.dF_yF[3] * cd - t.F_yF * sd) / p.m;

  X(iR, iVX) = (t.dF_yF[0] * cd * p.l_F - t.dF_yR[0] * p.l_R) / p.I_z;
  X(iR, iVY) = (t.dF_yF[1] * cd * p.l_F - t.dF_yR[1] * p.l_R) / p.I_z;
  X(iR, iR) = (t.dF_yF[2] * cd * p.l_F - t.dF_yR[2] * p.l_R) / p.I_z;
  X(iR, iFM) = sd * p.l_F / p.I_z;
  X(iR, iDELTA) = ((x[iFM] * cd + t.dF_yF[3] * cd - t.F_yF * sd) * p.l_F) / p.I_z;

  U(iR, 2) = 1.0 / p.I_z;
  U(iFM, 0) = 1.0;
  U(iDELTA, 1) = 1.0;
}

/// Full 8-state time derivative of Eq-style dynamics (s included).
inline std::array<double, 8> f_time(const CurvState& x, const ModelInput& u,
                                    double kappa, const VehicleParams& p) {
  Deriv7 d;
  eval_time_dynamics(reduce(x), to_array(u), kappa, p, d, false);
  return {d.sdot,   d.f[iN], d.f[iMU], d.f[iVX],
          d.f[iVY], d.f[iR], d.f[iFM], d.f[iDELTA]};
}

/// Longitudinal acceleration d v_x / d t (the planner-consistent a_x target).
inline double longitudinal_accel(const State7& x, const Input3& u, double kappa,
                                 const VehicleParams& p) {
  Deriv7 d;
  eval_time_dynamics(x, u, kappa, p, d, false);
  return d.f[iVX];
}

/// Spatial-domain derivative d x / d s = f_time / sdot of the reduced state.
inline void eval_space_dynamics(const State7& x, const Input3& u, double kappa,
                                const VehicleParams& p, Deriv7& out, bool want_jac,
                                Guard guard = Guard::strict) {
  eval_time_dynamics(x, u, kappa, p, out, want_jac, guard);
  double sd = out.sdot;
  if (guard == Guard::strict) {
    if (!(sd > 0.1)) throw NonForwardProgressError(sd);
  } else if (sd < 0.1) {
    sd = 0.1;
    out.dsdot.fill(0.0);
  }
  const double inv = 1.0 / sd;
  if (want_jac) {
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j)
        out.J_x[i * 7 + j] = (out.J_x[i * 7 + j] - out.f[i] * inv * out.dsdot[j]) * inv;
      for (int j = 0; j < 3; ++j) out.J_u[i * 3 + j] *= inv;
    }
  }
  for (int i = 0; i < 7; ++i) out.f[i] *= inv;
  out.sdot = sd;
}

inline State7 f_space(const State7& x, const Input3& u, double kappa,
                      const VehicleParams& p) {
  Deriv7 d;
  eval_space_dynamics(x, u, kappa, p, d, false);
  return d.f;
}

/// Forward-Euler step of the spatial model: x' = x + ds * f_space(x, u).
inline State7 step_space_euler(const State7& x, const Input3& u, double kappa,
                               double ds, const VehicleParams& p,
                               Mat7x7* A = nullptr, Mat7x3* B = nullptr,
                               Guard guard = Guard::strict) {
  Deriv7 d;
  eval_space_dynamics(x, u, kappa, p, d, A != nullptr, guard);
  State7 next;
  for (int i = 0; i < 7; ++i) next[i] = x[i] + ds * d.f[i];
  if (A) {
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        (*A)[i * 7 + j] = (i == j ? 1.0 : 0.0) + ds * d.J_x[i * 7 + j];
    for (int i = 0; i < 21; ++i) (*B)[i] = ds * d.J_u[i];
  }
  return next;
}

/// Midpoint RK2 step of the reduced time-domain model. Curvature is frozen
/// for both stage evaluations (s-dependence is decoupled via the guess).
inline State7 step_time_rk2(const State7& x, const Input3& u, double kappa,
                            double dt, const VehicleParams& p, Mat7x7* A = nullptr,
                            Mat7x3* B = nullptr, Guard guard = Guard::strict) {
  const bool jac = A != nullptr;
  Deriv7 d1, d2;
  eval_time_dynamics(x, u, kappa, p, d1, jac, guard);
  State7 xm;
  for (int i = 0; i < 7; ++i) xm[i] = x[i] + 0.5 * dt * d1.f[i];
  eval_time_dynamics(xm, u, kappa, p, d2, jac, guard);
  State7 next;
  for (int i = 0; i < 7; ++i) next[i] = x[i] + dt * d2.f[i];
  if (jac) {
    // A = I + dt J2 (I + dt/2 J1);  B = dt (J2 * dt/2 B1 + B2)
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) {
        double acc = d2.J_x[i * 7 + j];
        for (int k = 0; k < 7; ++k)
          acc += d2.J_x[i * 7 + k] * 0.5 * dt * d1.J_x[k * 7 + j];
        (*A)[i * 7 + j] = (i == j ? 1.0 : 0.0) + dt * acc;
      }
      for (int j = 0; j < 3; ++j) {
        double acc = d2.J_u[i * 3 + j];
        for (int k = 0; k < 7; ++k)
          acc += d2.J_x[i * 7 + k] * 0.5 * dt * d1.J_u[k * 3 + j];
        (*B)[i * 3 + j] = dt * acc;
      }
    }
  }
  return next;
}

}  // namespace racestack
