#pragma once

#include <stdexcept>

namespace racestack {

/// Physical constants of the planning (single-track) model plus the input
/// box limits. Defaults are Formula-Student scale and config-overridable.
struct VehicleParams {
  double m = 190.0;      // vehicle mass [kg]
  double I_z = 110.0;    // yaw inertia [kg m^2]
  double l_F = 0.80;     // CoG to front axle [m]
  double l_R = 0.72;     // CoG to rear axle [m]

  // Simplified Pacejka lateral coefficients (dimensionless; force scales
  // with the axle normal load).
  double pac_B = 9.5;
  double pac_C = 1.7;
  double pac_D = 1.3;

  double C_l = 3.0;      // lift (downforce) coefficient [N s^2/m^2]
  double C_r = 50.0;     // rolling resistance force [N]
  double C_d = 1.2;      // drag coefficient [N s^2/m^2]

  double rho_long = 1.2; // friction ellipse shape [-]
  double lambda = 0.95;  // max combined-force fraction [-]

  double L_c = 1.5;      // CoG to furthest corner, longitudinal [m]
  double W_c = 0.7;      // CoG to furthest corner, lateral [m]

  // Input / lifted-state box limits (symmetric).
  double F_M_max = 2000.0;     // motor force per axle [N]
  double delta_max = 0.45;     // steering angle [rad]
  double dF_M_max = 20000.0;   // motor force rate [N/s]
  double ddelta_max = 1.5;     // steering rate [rad/s]
  double M_tv_max = 1000.0;    // torque vectoring yaw moment [N m]

  double v_min = 1.0;          // guard speed for slip/progress divisions [m/s]
  double g = 9.81;

  double wheelbase() const { return l_F + l_R; }

  void validate() const {
    if (!(m > 0 && I_z > 0 && l_F > 0 && l_R > 0))
      throw std::invalid_argument("mass, inertia and axle distances must be positive");
    if (!(pac_D > 0 && pac_D <= 3.0)) throw std::invalid_argument("Pacejka D must be in (0, 3]");
    if (!(lambda > 0 && lambda <= 1.2)) throw std::invalid_argument("lambda must be in (0, 1.2]");
    if (!(wheelbase() > 0)) throw std::invalid_argument("wheelbase must be positive");
    if (!(F_M_max > 0 && delta_max > 0 && dF_M_max > 0 && ddelta_max > 0 && M_tv_max >= 0))
      throw std::invalid_argument("box limits must be positive");
    if (!(v_min > 0)) throw std::invalid_argument("v_min must be positive");
  }
};

}  // namespace racestack
