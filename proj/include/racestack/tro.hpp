#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <memory>

#include "racestack/constraints.hpp"
#include "racestack/model.hpp"
#include "racestack/nlp.hpp"
#include "racestack/racing_cost.hpp"
#include "racestack/track.hpp"

namespace racestack {

/// Periodic lap-time-optimal solution on the centerline s-grid.
struct RaceLine {
  double ds = 0.0;  // grid step (path length / N)
  std::vector<double> s;
  std::vector<State7> states;
  std::vector<Input3> inputs;
  double lap_time = 0.0;

  double periodicity_residual = 0.0;     // scaled, from an independent rollout
  double max_constraint_residual = 0.0;  // constraints-module recheck
  double solver_kkt = 0.0, solver_eq_inf = 0.0, solver_ineq_inf = 0.0;

  std::size_t size() const { return states.size(); }
  double length() const { return ds * static_cast<double>(states.size()); }

  /// Periodic linear interpolation of the velocity profile V̄_x(s).
  double terminal_velocity(double query) const {
    const double L = length();
    const double w = wrap_periodic(query, L);
    std::size_t i = static_cast<std::size_t>(w / ds);
    if (i >= states.size()) i = states.size() - 1;
    const std::size_t j = (i + 1) % states.size();
    const double t = (w - static_cast<double>(i) * ds) / ds;
    return states[i][iVX] + t * (states[j][iVX] - states[i][iVX]);
  }
};

inline double lap_time(const RaceLine& rl) { return rl.lap_time; }
inline double terminal_velocity(const RaceLine& rl, double s) {
  return rl.terminal_velocity(s);
}

namespace detail {

// Per-variable scales used for both the solver and residual scaling.
inline const std::array<double, 7>& state_scales() {
  static const std::array<double, 7> s{1.0, 0.5, 10.0, 2.0, 1.0, 1000.0, 0.3};
  return s;
}
inline const std::array<double, 3>& input_scales() {
  static const std::array<double, 3> s{10000.0, 1.0, 500.0};
  return s;
}

}  // namespace detail

struct TroSetup {
  double ds = 0.5;
  bool tv_enabled = true;
  double initial_speed = 8.0;
  NlpOptions solver;
  TroSetup() {
    // Stationarity at 1e-3 (scaled) leaves optimality errors far below the
    // 1e-3 feasibility certificates; the last decade of gradient polish is
    // expensive with a first-order-corrected inner model and buys nothing.
    solver.tol_kkt = 1e-3;
    solver.max_inner = 1500;
    solver.max_outer = 60;
  }
};

/// The assembled periodic racing NLP plus the stage data it references.
struct TroTranscription {
  struct Data {
    int N = 0;
    double h = 0.0;
    std::vector<double> kappa, N_L, N_R, sgrid;
    VehicleParams params;
    TroWeights weights;
  };
  std::shared_ptr<Data> data;
  NlpProblem problem;
  std::vector<double> initial_guess;
};

/// Assembles the periodic spatial-domain racing NLP with forward-Euler
/// transcription; stage k's successor is stage k+1 mod N, which carries the
/// periodicity constraint.
inline TroTranscription make_tro_problem(const ArcLengthPath& path,
                                         const VehicleParams& params,
                                         const TroWeights& weights,
                                         const TroSetup& setup = {}) {
  params.validate();
  const double L = path.length();
  const int N = static_cast<int>(std::llround(L / setup.ds));
  if (N < 20) throw std::invalid_argument("track too short for the requested ds");
  const double h = L / N;

  auto shared = std::make_shared<TroTranscription::Data>();
  shared->N = N;
  shared->h = h;
  shared->params = params;
  shared->weights = weights;
  shared->kappa.resize(N);
  shared->N_L.resize(N);
  shared->N_R.resize(N);
  shared->sgrid.resize(N);
  std::vector<double>& kappa = shared->kappa;
  std::vector<double>& N_L = shared->N_L;
  std::vector<double>& N_R = shared->N_R;
  for (int k = 0; k < N; ++k) {
    shared->sgrid[k] = k * h;
    kappa[k] = path.curvature(shared->sgrid[k]);
    N_L[k] = path.width_left(shared->sgrid[k]);
    N_R[k] = path.width_right(shared->sgrid[k]);
    if (N_L[k] + N_R[k] < 2.0 * params.W_c + 0.05)
      throw TrackValidationError("track narrower than the car footprint at s = " +
                                 std::to_string(shared->sgrid[k]));
  }

  const auto& xsc = detail::state_scales();
  const auto& usc = detail::input_scales();
  const int nvar = 10 * N;

  NlpProblem prob;
  prob.n = nvar;
  prob.m_eq = 7 * N;
  prob.m_ineq = 4 * N;
  prob.scale.resize(nvar);
  prob.lo.assign(nvar, -kInf);
  prob.hi.assign(nvar, kInf);
  prob.cost_curvature.assign(nvar, 0.0);
  const double vg0 = std::max(setup.initial_speed, params.v_min);
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < 7; ++i) prob.scale[10 * k + i] = xsc[i];
    for (int i = 0; i < 3; ++i) prob.scale[10 * k + 7 + i] = usc[i];
    prob.cost_curvature[10 * k + iVY] = 2.0 * weights.q_beta / (vg0 * vg0);
    prob.cost_curvature[10 * k + iDELTA] =
        2.0 * weights.q_beta * sqr(params.l_R / params.wheelbase());
    prob.cost_curvature[10 * k + 7] = 2.0 * weights.R_dF_M;
    prob.cost_curvature[10 * k + 8] = 2.0 * weights.R_ddelta;
    prob.cost_curvature[10 * k + 9] = 2.0 * weights.R_M_tv;
    const double nb = std::abs(kappa[k]) > 1e-6
                          ? std::min(6.0, 0.85 / std::abs(kappa[k]))
                          : 6.0;
    prob.lo[10 * k + iN] = -nb;
    prob.hi[10 * k + iN] = nb;
    prob.lo[10 * k + iMU] = -1.2;
    prob.hi[10 * k + iMU] = 1.2;
    // Speed cap implied by the friction ellipse at this stage's curvature,
    // with headroom so the ellipse (not this bound) is active at the optimum.
    double v_cap = 60.0;
    const double lamD = params.lambda * params.pac_D;
    const double denom_cap = params.m * std::abs(kappa[k]) - lamD * params.C_l;
    if (denom_cap > 1e-9)
      v_cap = std::min(v_cap, 1.3 * std::sqrt(lamD * params.m * params.g / denom_cap));
    prob.lo[10 * k + iVX] = params.v_min;
    prob.hi[10 * k + iVX] = v_cap;
    prob.lo[10 * k + iVY] = -10.0;
    prob.hi[10 * k + iVY] = 10.0;
    prob.lo[10 * k + iR] = -5.0;
    prob.hi[10 * k + iR] = 5.0;
    prob.lo[10 * k + iFM] = -params.F_M_max;
    prob.hi[10 * k + iFM] = params.F_M_max;
    prob.lo[10 * k + iDELTA] = -params.delta_max;
    prob.hi[10 * k + iDELTA] = params.delta_max;
    prob.lo[10 * k + 7] = -params.dF_M_max;
    prob.hi[10 * k + 7] = params.dF_M_max;
    prob.lo[10 * k + 8] = -params.ddelta_max;
    prob.hi[10 * k + 8] = params.ddelta_max;
    const double tv = setup.tv_enabled ? params.M_tv_max : 0.0;
    prob.lo[10 * k + 9] = -tv;
    prob.hi[10 * k + 9] = tv;
  }

  // Dynamics residual pattern: rows 7k+i, columns of stage k and k+1 mod N.
  for (int k = 0; k < N; ++k) {
    const int knext = (k + 1) % N;
    for (int i = 0; i < 7; ++i) {
      const int row = 7 * k + i;
      for (int j = 0; j < 7; ++j) {
        prob.eq_pat.row.push_back(row);
        prob.eq_pat.col.push_back(10 * k + j);
      }
      for (int j = 0; j < 3; ++j) {
        prob.eq_pat.row.push_back(row);
        prob.eq_pat.col.push_back(10 * k + 7 + j);
      }
      prob.eq_pat.row.push_back(row);
      prob.eq_pat.col.push_back(10 * knext + i);
    }
  }
  // Inequality pattern: per stage [g_L, g_R] over (n, mu), ellipse rows over
  // (vx, vy, r, FM, delta).
  for (int k = 0; k < N; ++k) {
    for (int rowoff : {0, 1}) {
      prob.ineq_pat.row.push_back(4 * k + rowoff);
      prob.ineq_pat.col.push_back(10 * k + iN);
      prob.ineq_pat.row.push_back(4 * k + rowoff);
      prob.ineq_pat.col.push_back(10 * k + iMU);
    }
    for (int rowoff : {2, 3}) {
      for (int j : {iVX, iVY, iR, iFM, iDELTA}) {
        prob.ineq_pat.row.push_back(4 * k + rowoff);
        prob.ineq_pat.col.push_back(10 * k + j);
      }
    }
  }

  prob.cost = [shared, N](const double* z, double* grad) {
    const std::vector<double>& kappa = shared->kappa;
    const VehicleParams& params = shared->params;
    const TroWeights& weights = shared->weights;
    double total = 0.0;
    if (grad) std::fill(grad, grad + 10 * N, 0.0);
    for (int k = 0; k < N; ++k) {
      const State7 x{z[10 * k + 0], z[10 * k + 1], z[10 * k + 2], z[10 * k + 3],
                     z[10 * k + 4], z[10 * k + 5], z[10 * k + 6]};
      const Input3 u{z[10 * k + 7], z[10 * k + 8], z[10 * k + 9]};
      if (grad) {
        std::array<double, 7> gx{};
        std::array<double, 3> gu{};
        total += stage_cost(x, u, kappa[k], 0.0, params, weights, &gx, &gu);
        for (int i = 0; i < 7; ++i) grad[10 * k + i] += gx[i];
        for (int i = 0; i < 3; ++i) grad[10 * k + 7 + i] += gu[i];
      } else {
        total += stage_cost(x, u, kappa[k], 0.0, params, weights);
      }
    }
    return total;
  };

  prob.eq = [shared, N, h, &xsc](const double* z, double* c, double* jac) {
    const std::vector<double>& kappa = shared->kappa;
    const VehicleParams& params = shared->params;
    std::size_t t = 0;
    for (int k = 0; k < N; ++k) {
      const int knext = (k + 1) % N;
      const State7 x{z[10 * k + 0], z[10 * k + 1], z[10 * k + 2], z[10 * k + 3],
                     z[10 * k + 4], z[10 * k + 5], z[10 * k + 6]};
      const Input3 u{z[10 * k + 7], z[10 * k + 8], z[10 * k + 9]};
      Mat7x7 A;
      Mat7x3 B;
      const State7 next =
          step_space_euler(x, u, kappa[k], h, params, jac ? &A : nullptr,
                           jac ? &B : nullptr, Guard::clamped);
      for (int i = 0; i < 7; ++i)
        c[7 * k + i] = (z[10 * knext + i] - next[i]) / xsc[i];
      if (jac) {
        for (int i = 0; i < 7; ++i) {
          for (int j = 0; j < 7; ++j) jac[t++] = -A[i * 7 + j] / xsc[i];
          for (int j = 0; j < 3; ++j) jac[t++] = -B[i * 3 + j] / xsc[i];
          jac[t++] = 1.0 / xsc[i];
        }
      }
    }
  };

  prob.ineq = [shared, N](const double* z, double* c, double* jac) {
    const std::vector<double>& N_L = shared->N_L;
    const std::vector<double>& N_R = shared->N_R;
    const VehicleParams& params = shared->params;
    std::size_t t = 0;
    for (int k = 0; k < N; ++k) {
      const State7 x{z[10 * k + 0], z[10 * k + 1], z[10 * k + 2], z[10 * k + 3],
                     z[10 * k + 4], z[10 * k + 5], z[10 * k + 6]};
      double dmu;
      const TrackResiduals tr =
          track_residuals_smooth(x[iN], x[iMU], N_L[k], N_R[k], params, &dmu);
      c[4 * k + 0] = tr.g_L;
      c[4 * k + 1] = tr.g_R;
      double gF, gR;
      std::array<double, 7> dF, dR;
      ellipse_residuals_normalized(x, params, gF, gR, jac ? &dF : nullptr,
                                   jac ? &dR : nullptr);
      c[4 * k + 2] = gF;
      c[4 * k + 3] = gR;
      if (jac) {
        jac[t++] = 1.0;   // g_L / n
        jac[t++] = dmu;   // g_L / mu
        jac[t++] = -1.0;  // g_R / n
        jac[t++] = dmu;   // g_R / mu
        for (int j : {iVX, iVY, iR, iFM, iDELTA}) jac[t++] = dF[j];
        for (int j : {iVX, iVY, iR, iFM, iDELTA}) jac[t++] = dR[j];
      }
    }
  };

  // Initial guess: centerline at constant modest speed with kinematic yaw
  // and steering, inputs zero. Not dynamics-feasible, but well inside the
  // guards; the AL loop closes the dynamics within a few outer iterations.
  std::vector<double> z0(nvar, 0.0);
  const double v0 = setup.initial_speed;
  for (int k = 0; k < N; ++k) {
    z0[10 * k + iN] = 0.0;
    z0[10 * k + iMU] = 0.0;
    z0[10 * k + iVX] = v0;
    z0[10 * k + iVY] = 0.0;
    z0[10 * k + iR] = kappa[k] * v0;
    z0[10 * k + iFM] = 0.5 * (params.C_r + params.C_d * v0 * v0);
    z0[10 * k + iDELTA] =
        clamp(std::atan(kappa[k] * params.wheelbase()), -params.delta_max, params.delta_max);
  }

  TroTranscription out;
  out.data = shared;
  out.problem = std::move(prob);
  out.initial_guess = std::move(z0);
  return out;
}

/// Solves the racing NLP and packages the race line with independent
/// feasibility rechecks. Throws SolverError with diagnostics on failure.
inline RaceLine build_and_solve_tro(const ArcLengthPath& path, const VehicleParams& params,
                                    const TroWeights& weights, const TroSetup& setup = {}) {
  TroTranscription tr = make_tro_problem(path, params, weights, setup);
  const int N = tr.data->N;
  const double h = tr.data->h;
  const std::vector<double>& kappa = tr.data->kappa;
  const std::vector<double>& N_L = tr.data->N_L;
  const std::vector<double>& N_R = tr.data->N_R;
  const std::vector<double>& sgrid = tr.data->sgrid;
  const auto& xsc = detail::state_scales();

  NlpSolution sol = solve(tr.problem, tr.initial_guess, setup.solver);
  if (sol.status != NlpStatus::success)
    throw SolverError("trajectory optimization failed: " + sol.message, sol);

  RaceLine rl;
  rl.ds = h;
  rl.s = sgrid;
  rl.states.resize(N);
  rl.inputs.resize(N);
  double T = 0.0;
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < 7; ++i) rl.states[k][i] = sol.x[10 * k + i];
    for (int i = 0; i < 3; ++i) rl.inputs[k][i] = sol.x[10 * k + 7 + i];
    Deriv7 d;
    eval_time_dynamics(rl.states[k], rl.inputs[k], kappa[k], params, d, false);
    T += h / d.sdot;
  }
  rl.lap_time = T;
  rl.solver_kkt = sol.kkt;
  rl.solver_eq_inf = sol.eq_inf;
  rl.solver_ineq_inf = sol.ineq_inf;

  // Independent rechecks (constraints module + periodicity rollout).
  double worst = -1e300;
  for (int k = 0; k < N; ++k)
    worst = std::max(worst,
                     check_stage(rl.states[k], rl.inputs[k], N_L[k], N_R[k], params).worst());
  rl.max_constraint_residual = worst;
  const State7 wrap =
      step_space_euler(rl.states[N - 1], rl.inputs[N - 1], kappa[N - 1], h, params);
  double per = 0.0;
  for (int i = 0; i < 7; ++i)
    per = std::max(per, std::abs(wrap[i] - rl.states[0][i]) / xsc[i]);
  rl.periodicity_residual = per;
  return rl;
}

/// RaceLine CSV + JSON metadata sidecar.
inline void save_raceline(const RaceLine& rl, const std::string& csv_path,
                          const std::string& meta_path, uint64_t config_hash = 0) {
  std::FILE* f = std::fopen(csv_path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write raceline file: " + csv_path);
  std::fprintf(f, "s_m,n_m,mu_rad,vx_mps,vy_mps,r_radps,FM_N,delta_rad,dFM_Nps,"
                  "ddelta_radps,Mtv_Nm\n");
  for (std::size_t k = 0; k < rl.size(); ++k) {
    std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                 rl.s[k], rl.states[k][0], rl.states[k][1], rl.states[k][2],
                 rl.states[k][3], rl.states[k][4], rl.states[k][5], rl.states[k][6],
                 rl.inputs[k][0], rl.inputs[k][1], rl.inputs[k][2]);
  }
  std::fclose(f);

  nlohmann::json meta;
  meta["delta_s"] = rl.ds;
  meta["lap_time"] = rl.lap_time;
  meta["periodicity_residual"] = rl.periodicity_residual;
  meta["max_constraint_residual"] = rl.max_constraint_residual;
  meta["solver"] = {{"kkt", rl.solver_kkt},
                    {"eq_inf", rl.solver_eq_inf},
                    {"ineq_inf", rl.solver_ineq_inf}};
  meta["config_hash"] = config_hash;
  std::ofstream out(meta_path);
  out << meta.dump(2) << "\n";
}

inline RaceLine load_raceline(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open raceline file: " + csv_path);
  RaceLine rl;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    State7 x;
    Input3 u;
    double s;
    if (std::sscanf(line.c_str(),
                    "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &s, &x[0],
                    &x[1], &x[2], &x[3], &x[4], &x[5], &x[6], &u[0], &u[1],
                    &u[2]) != 11)
      throw std::runtime_error("malformed raceline row: " + line);
    rl.s.push_back(s);
    rl.states.push_back(x);
    rl.inputs.push_back(u);
  }
  if (rl.size() < 2) throw std::runtime_error("raceline has fewer than 2 rows");
  rl.ds = rl.s[1] - rl.s[0];
  return rl;
}

}  // namespace racestack
