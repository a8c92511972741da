#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "racestack/model.hpp"

using namespace racestack;

namespace {

// Independent scalar transcription of the eight dynamics rows, kept separate
// from the implementation on purpose. Slip convention: restoring lateral
// forces, alpha_F = delta - atan((vy + lF r)/vx).
std::array<double, 8> oracle_f_time(const CurvState& x, const ModelInput& u,
                                    double kappa, const VehicleParams& p) {
  const double vg = std::max(x.v_x, p.v_min);
  const double aF = x.delta - std::atan((x.v_y + p.l_F * x.r) / vg);
  const double aR = -std::atan((x.v_y - p.l_R * x.r) / vg);
  const double Fn = p.m * p.g + p.C_l * x.v_x * x.v_x;
  const double FnF = Fn * p.l_R / (p.l_F + p.l_R);
  const double FnR = Fn * p.l_F / (p.l_F + p.l_R);
  const double FyF = FnF * p.pac_D * std::sin(p.pac_C * std::atan(p.pac_B * aF));
  const double FyR = FnR * p.pac_D * std::sin(p.pac_C * std::atan(p.pac_B * aR));
  const double Ffric = p.C_r + p.C_d * x.v_x * x.v_x;
  const double sdot =
      (x.v_x * std::cos(x.mu) - x.v_y * std::sin(x.mu)) / (1.0 - x.n * kappa);
  return {
      sdot,
      x.v_x * std::sin(x.mu) + x.v_y * std::cos(x.mu),
      x.r - kappa * sdot,
      (x.F_M * (1.0 + std::cos(x.delta)) - FyF * std::sin(x.delta) +
       p.m * x.v_y * x.r - Ffric) /
          p.m,
      (FyR + x.F_M * std::sin(x.delta) + FyF * std::cos(x.delta) -
       p.m * x.v_x * x.r) /
          p.m,
      ((x.F_M * std::sin(x.delta) + FyF * std::cos(x.delta)) * p.l_F -
       FyR * p.l_R + u.M_tv) /
          p.I_z,
      u.dF_M,
      u.ddelta,
  };
}

State7 random_feasible_state(std::mt19937& rng) {
  std::uniform_real_distribution<double> un(-1.5, 1.5), umu(-0.4, 0.4),
      uvx(2.0, 25.0), uvy(-2.0, 2.0), ur(-2.0, 2.0), ufm(-1500.0, 1500.0),
      ud(-0.4, 0.4);
  return {un(rng), umu(rng), uvx(rng), uvy(rng), ur(rng), ufm(rng), ud(rng)};
}

Input3 random_input(std::mt19937& rng) {
  std::uniform_real_distribution<double> ufm(-10000.0, 10000.0), ud(-1.0, 1.0),
      utv(-800.0, 800.0);
  return {ufm(rng), ud(rng), utv(rng)};
}

}  // namespace

TEST_CASE("slip angles at trivial operating points") {
  VehicleParams p;
  double aF, aR;
  slip_angles({0, 0, 10.0, 0, 0, 0, 0}, p, aF, aR);
  CHECK(aF == 0.0);
  CHECK(aR == 0.0);

  slip_angles({0, 0, 10.0, 0, 0, 0, 0.1}, p, aF, aR);
  CHECK_THAT(aF, Catch::Matchers::WithinAbs(0.1, 1e-15));
  CHECK(aR == 0.0);

  p.l_F = 0.8;
  slip_angles({0, 0, 10.0, 1.0, 0.5, 0, 0}, p, aF, aR);
  CHECK_THAT(aF, Catch::Matchers::WithinAbs(-std::atan(1.4 / 10.0), 1e-12));
}

TEST_CASE("lateral force magnitude matches the scalar formula") {
  VehicleParams p;
  p.pac_B = 10.0;
  p.pac_C = 1.7;
  p.pac_D = 1.2;
  const double F_N = 1500.0;
  const double expected = F_N * 1.2 * std::sin(1.7 * std::atan(0.5));
  CHECK_THAT(F_N * pacejka_lateral(0.05, p), Catch::Matchers::WithinAbs(expected, 1e-9));
  CHECK_THAT(expected, Catch::Matchers::WithinAbs(1276.35, 0.01));
}

TEST_CASE("tire force is odd and loads are monotone in speed") {
  VehicleParams p;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> ua(-0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    const double a = ua(rng);
    CHECK(pacejka_lateral(-a, p) == -pacejka_lateral(a, p));
  }
  double prev = 0.0;
  for (double v = 1.0; v < 40.0; v += 1.0) {
    const NormalLoads nl = normal_loads(v, p);
    CHECK(nl.net > prev);
    CHECK_THAT(nl.front + nl.rear, Catch::Matchers::WithinRel(nl.net, 1e-14));
    prev = nl.net;
  }
}

TEST_CASE("f_time matches an independent transcription") {
  VehicleParams p;
  const CurvState x{3.0, 0.4, -0.1, 14.0, -0.6, 0.8, 700.0, 0.12};
  const ModelInput u{2500.0, -0.3, 150.0};
  const double kappa = 0.04;
  const auto got = f_time(x, u, kappa, p);
  const auto want = oracle_f_time(x, u, kappa, p);
  for (int i = 0; i < 8; ++i)
    CHECK_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-12));
}

TEST_CASE("f_time trivial rows") {
  VehicleParams p;
  // n = 0, mu = 0, v_y = 0: sdot = v_x.
  auto d = f_time({0, 0, 0, 12.0, 0, 0, 0, 0}, {}, 0.03, p);
  CHECK_THAT(d[0], Catch::Matchers::WithinAbs(12.0, 1e-12));

  // Straight running with drive force balancing friction: vxdot = 0.
  const double vx = 9.0;
  const double FM = 0.5 * (p.C_r + p.C_d * vx * vx);
  d = f_time({0, 0, 0, vx, 0, 0, FM, 0}, {}, 0.0, p);
  CHECK_THAT(d[3], Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("f_time enforces the singularity guard") {
  VehicleParams p;
  CHECK_THROWS_AS(f_time({0, 4.9, 0, 10, 0, 0, 0, 0}, {}, 0.2, p), SingularityError);
}

TEST_CASE("f_space equals f_time scaled by progress rate") {
  VehicleParams p;
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> uk(-0.08, 0.08);
  for (int i = 0; i < 1000; ++i) {
    const State7 x = random_feasible_state(rng);
    const Input3 u = random_input(rng);
    const double kappa = uk(rng);
    Deriv7 dt_, ds_;
    eval_time_dynamics(x, u, kappa, p, dt_, false);
    if (!(dt_.sdot > 0.15)) continue;
    eval_space_dynamics(x, u, kappa, p, ds_, false);
    for (int j = 0; j < 7; ++j) {
      REQUIRE_THAT(ds_.f[j] * dt_.sdot - dt_.f[j],
                   Catch::Matchers::WithinAbs(0.0, 1e-10 * std::max(1.0, std::abs(dt_.f[j]))));
    }
  }
}

TEST_CASE("f_space on the centerline gives dn/ds = vy/vx") {
  VehicleParams p;
  const State7 x{0, 0, 16.0, 0.9, 0, 0, 0};
  const auto f = f_space(x, {}, 0.02, p);
  CHECK_THAT(f[iN], Catch::Matchers::WithinAbs(0.9 / 16.0, 1e-12));
}

TEST_CASE("f_space rejects non-forward progress") {
  VehicleParams p;
  // mu near pi/2: progress rate collapses.
  const State7 x{0, 1.57, 2.0, 0, 0, 0, 0};
  CHECK_THROWS_AS(f_space(x, {}, 0.0, p), NonForwardProgressError);
}

TEST_CASE("analytic Jacobians match central differences") {
  VehicleParams p;
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> uk(-0.08, 0.08);
  int tested = 0;
  for (int trial = 0; trial < 400 && tested < 200; ++trial) {
    const State7 x = random_feasible_state(rng);
    const Input3 u = random_input(rng);
    const double kappa = uk(rng);
    Deriv7 d;
    eval_time_dynamics(x, u, kappa, p, d, true);
    if (!(d.sdot > 0.5)) continue;
    ++tested;

    for (bool spatial : {false, true}) {
      Deriv7 da;
      if (spatial)
        eval_space_dynamics(x, u, kappa, p, da, true);
      else
        eval_time_dynamics(x, u, kappa, p, da, true);

      for (int j = 0; j < 7; ++j) {
        State7 xp = x, xm = x;
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        xp[j] += h;
        xm[j] -= h;
        Deriv7 dp, dm;
        if (spatial) {
          eval_space_dynamics(xp, u, kappa, p, dp, false);
          eval_space_dynamics(xm, u, kappa, p, dm, false);
        } else {
          eval_time_dynamics(xp, u, kappa, p, dp, false);
          eval_time_dynamics(xm, u, kappa, p, dm, false);
        }
        for (int i = 0; i < 7; ++i) {
          const double fd = (dp.f[i] - dm.f[i]) / (2.0 * h);
          const double an = da.J_x[i * 7 + j];
          REQUIRE_THAT(an - fd,
                       Catch::Matchers::WithinAbs(0.0, 1e-5 * std::max(1.0, std::abs(fd))));
        }
      }
      for (int j = 0; j < 3; ++j) {
        Input3 up = u, um = u;
        const double h = 1e-4 * std::max(1.0, std::abs(u[j]));
        up[j] += h;
        um[j] -= h;
        Deriv7 dp, dm;
        if (spatial) {
          eval_space_dynamics(x, up, kappa, p, dp, false);
          eval_space_dynamics(x, um, kappa, p, dm, false);
        } else {
          eval_time_dynamics(x, up, kappa, p, dp, false);
          eval_time_dynamics(x, um, kappa, p, dm, false);
        }
        for (int i = 0; i < 7; ++i) {
          const double fd = (dp.f[i] - dm.f[i]) / (2.0 * h);
          const double an = da.J_u[i * 3 + j];
          REQUIRE_THAT(an - fd,
                       Catch::Matchers::WithinAbs(0.0, 1e-5 * std::max(1.0, std::abs(fd))));
        }
      }
    }
  }
  REQUIRE(tested == 200);
}

TEST_CASE("step_space_euler matches a hand-integrated step") {
  VehicleParams p;
  const State7 x{0.2, 0.05, 12.0, -0.3, 0.5, 400.0, 0.08};
  const Input3 u{1000.0, 0.2, 50.0};
  const double kappa = 0.05, ds = 0.5;

  const State7 next = step_space_euler(x, u, kappa, ds, p);
  const State7 f = f_space(x, u, kappa, p);
  for (int i = 0; i < 7; ++i)
    CHECK_THAT(next[i], Catch::Matchers::WithinAbs(x[i] + ds * f[i], 1e-12));

  const State7 same = step_space_euler(x, u, kappa, 0.0, p);
  for (int i = 0; i < 7; ++i) CHECK(same[i] == x[i]);
}

TEST_CASE("rk2 step is identity at dt = 0 and second-order accurate") {
  VehicleParams p;
  const State7 x{0.1, 0.02, 15.0, -0.2, 0.6, 500.0, 0.1};
  const Input3 u{2000.0, 0.1, 100.0};
  const double kappa = 0.04;

  const State7 same = step_time_rk2(x, u, kappa, 0.0, p);
  for (int i = 0; i < 7; ++i) CHECK(same[i] == x[i]);

  // Reference: classic RK4 with tiny steps over the same horizon.
  auto rk4_fine = [&](double T, int steps) {
    State7 y = x;
    const double dt = T / steps;
    for (int k = 0; k < steps; ++k) {
      Deriv7 d1, d2, d3, d4;
      State7 tmp;
      eval_time_dynamics(y, u, kappa, p, d1, false);
      for (int i = 0; i < 7; ++i) tmp[i] = y[i] + 0.5 * dt * d1.f[i];
      eval_time_dynamics(tmp, u, kappa, p, d2, false);
      for (int i = 0; i < 7; ++i) tmp[i] = y[i] + 0.5 * dt * d2.f[i];
      eval_time_dynamics(tmp, u, kappa, p, d3, false);
      for (int i = 0; i < 7; ++i) tmp[i] = y[i] + dt * d3.f[i];
      eval_time_dynamics(tmp, u, kappa, p, d4, false);
      for (int i = 0; i < 7; ++i)
        y[i] += dt / 6.0 * (d1.f[i] + 2.0 * d2.f[i] + 2.0 * d3.f[i] + d4.f[i]);
    }
    return y;
  };

  const double T = 0.15;
  const State7 ref = rk4_fine(T, 4000);
  auto rk2_horizon = [&](int steps) {
    State7 y = x;
    for (int k = 0; k < steps; ++k) y = step_time_rk2(y, u, kappa, T / steps, p);
    double err = 0.0;
    for (int i = 0; i < 7; ++i) {
      const double scale = std::max(1.0, std::abs(ref[i]));
      err = std::max(err, std::abs(y[i] - ref[i]) / scale);
    }
    return err;
  };

  const double e1 = rk2_horizon(8);
  const double e2 = rk2_horizon(16);
  const double e3 = rk2_horizon(32);
  CHECK(e1 / e2 > 3.3);
  CHECK(e1 / e2 < 4.7);
  CHECK(e2 / e3 > 3.3);
  CHECK(e2 / e3 < 4.7);
}

TEST_CASE("rk2 Jacobians match finite differences") {
  VehicleParams p;
  const State7 x{0.1, 0.02, 15.0, -0.2, 0.6, 500.0, 0.1};
  const Input3 u{2000.0, 0.1, 100.0};
  const double kappa = 0.04, dt = 0.05;
  Mat7x7 A;
  Mat7x3 B;
  step_time_rk2(x, u, kappa, dt, p, &A, &B);
  for (int j = 0; j < 7; ++j) {
    State7 xp = x, xm = x;
    const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    xp[j] += h;
    xm[j] -= h;
    const State7 fp = step_time_rk2(xp, u, kappa, dt, p);
    const State7 fm = step_time_rk2(xm, u, kappa, dt, p);
    for (int i = 0; i < 7; ++i) {
      const double fd = (fp[i] - fm[i]) / (2.0 * h);
      CHECK_THAT(A[i * 7 + j] - fd,
                 Catch::Matchers::WithinAbs(0.0, 1e-6 * std::max(1.0, std::abs(fd))));
    }
  }
  for (int j = 0; j < 3; ++j) {
    Input3 up = u, um = u;
    const double h = 1e-4 * std::max(1.0, std::abs(u[j]));
    up[j] += h;
    um[j] -= h;
    const State7 fp = step_time_rk2(x, up, kappa, dt, p);
    const State7 fm = step_time_rk2(x, um, kappa, dt, p);
    for (int i = 0; i < 7; ++i) {
      const double fd = (fp[i] - fm[i]) / (2.0 * h);
      CHECK_THAT(B[i * 3 + j] - fd,
                 Catch::Matchers::WithinAbs(0.0, 1e-6 * std::max(1.0, std::abs(fd))));
    }
  }
}
