#pragma once

#include <cmath>
#include <numbers>

namespace racestack {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  // 90 degree counter-clockwise rotation (left normal of a tangent).
  Vec2 perp() const { return {-y, x}; }
};

inline Vec2 operator*(double k, const Vec2& v) { return {k * v.x, k * v.y}; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

/// Wraps s to [0, period). fmod keeps the reduction exact, so wrapping
/// s and s + k*period gives bitwise-equal results whenever the sum was exact.
inline double wrap_periodic(double s, double period) {
  double r = std::fmod(s, period);
  if (r < 0.0) r += period;
  if (r >= period) r = 0.0;
  return r;
}

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

inline double sqr(double v) { return v * v; }

}  // namespace racestack
