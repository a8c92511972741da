#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "racestack/cubic_spline.hpp"
#include "racestack/geometry.hpp"

namespace racestack {

struct TrackParseError : std::runtime_error {
  TrackParseError(const std::string& what, int line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
  int line_number;
};

struct TrackValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Lateral projection onto the reference path did not converge, or the query
/// point is outside the working corridor. Carries the last Newton iterate.
struct ProjectionError : std::runtime_error {
  ProjectionError(const std::string& what, double s, int iters)
      : std::runtime_error(what), last_s(s), iterations(iters) {}
  double last_s;
  int iterations;
};

/// Closed-loop centerline with per-point lateral half-widths.
struct Track {
  std::vector<Vec2> points;        // ordered, implicitly closed (last connects to first)
  std::vector<double> width_left;  // N_L > 0 [m]
  std::vector<double> width_right; // N_R > 0 [m]

  void validate() const {
    if (points.size() < 3)
      throw TrackValidationError("track needs at least 3 centerline points");
    if (width_left.size() != points.size() || width_right.size() != points.size())
      throw TrackValidationError("width arrays must match centerline point count");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!(width_left[i] > 0.0) || !(width_right[i] > 0.0))
        throw TrackValidationError("track widths must be strictly positive (point " +
                                   std::to_string(i) + ")");
      const Vec2 d = points[(i + 1) % points.size()] - points[i];
      if (d.norm() <= 1e-6)
        throw TrackValidationError("consecutive centerline points coincide (point " +
                                   std::to_string(i) + ")");
    }
  }
};

/// Loads a track CSV: header `x_m,y_m,w_left_m,w_right_m`, `#` comments.
/// An explicitly repeated first point (within 1e-9 m) is dropped; loop
/// closure is implicit.
inline Track load_track(const std::string& file_path) {
  std::ifstream in(file_path);
  if (!in) throw std::runtime_error("cannot open track file: " + file_path);

  Track track;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    if (!header_seen) {
      std::string h = trimmed;
      h.erase(std::remove_if(h.begin(), h.end(),
                             [](char c) { return c == ' ' || c == '\r'; }),
              h.end());
      if (h != "x_m,y_m,w_left_m,w_right_m")
        throw TrackParseError("expected header x_m,y_m,w_left_m,w_right_m", line_no);
      header_seen = true;
      continue;
    }
    std::stringstream ss(trimmed);
    std::string field;
    double vals[4];
    for (int k = 0; k < 4; ++k) {
      if (!std::getline(ss, field, ','))
        throw TrackParseError("expected 4 comma-separated fields", line_no);
      try {
        std::size_t pos = 0;
        vals[k] = std::stod(field, &pos);
        while (pos < field.size() && std::isspace(static_cast<unsigned char>(field[pos]))) ++pos;
        if (pos != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw TrackParseError("cannot parse numeric field '" + field + "'", line_no);
      }
    }
    track.points.push_back({vals[0], vals[1]});
    track.width_left.push_back(vals[2]);
    track.width_right.push_back(vals[3]);
  }
  if (!header_seen) throw TrackParseError("missing header row", std::max(line_no, 1));
  if (track.points.size() >= 2 &&
      (track.points.front() - track.points.back()).norm() <= 1e-9) {
    track.points.pop_back();
    track.width_left.pop_back();
    track.width_right.pop_back();
  }
  track.validate();
  return track;
}

/// Arc-length parametrization of a closed track: uniformly resampled grid,
/// smoothed curvature, and periodic interpolators for position, curvature
/// and widths. Sign convention: n > 0 lies to the LEFT of the driving
/// direction; counter-clockwise curvature is positive.
class ArcLengthPath {
 public:
  ArcLengthPath() = default;

  ArcLengthPath(const Track& track, double resample_step) {
    track.validate();
    const std::size_t p = track.points.size();

    std::vector<double> cum(p + 1, 0.0);
    for (std::size_t i = 0; i < p; ++i)
      cum[i + 1] = cum[i] + (track.points[(i + 1) % p] - track.points[i]).norm();
    const double poly_len = cum[p];
    if (!(resample_step > 0.0) || resample_step >= poly_len / 8.0)
      throw std::invalid_argument("resample_step must be in (0, L/8)");

    n_ = std::max<std::size_t>(8, static_cast<std::size_t>(std::llround(poly_len / resample_step)));
    h_ = poly_len / static_cast<double>(n_);
    length_ = poly_len;

    std::vector<double> xs(n_), ys(n_), wl(n_), wr(n_);
    std::size_t seg = 0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double s = static_cast<double>(j) * h_;
      while (seg + 1 < p && cum[seg + 1] <= s) ++seg;
      const double seg_len = cum[seg + 1] - cum[seg];
      const double t = (s - cum[seg]) / seg_len;
      const std::size_t a = seg, b = (seg + 1) % p;
      xs[j] = track.points[a].x + t * (track.points[b].x - track.points[a].x);
      ys[j] = track.points[a].y + t * (track.points[b].y - track.points[a].y);
      wl[j] = track.width_left[a] + t * (track.width_left[b] - track.width_left[a]);
      wr[j] = track.width_right[a] + t * (track.width_right[b] - track.width_right[a]);
    }

    sx_ = PeriodicCubicSpline(xs, h_);
    sy_ = PeriodicCubicSpline(ys, h_);

    // Tangent headings from the position spline, then curvature as the
    // symmetric heading difference quotient, seam-safe via angle wrapping.
    std::vector<double> theta(n_);
    double total_turn = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double s = static_cast<double>(j) * h_;
      theta[j] = std::atan2(sy_.deriv(s), sx_.deriv(s));
    }
    std::vector<double> kappa(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      const double dp = wrap_angle(theta[(j + 1) % n_] - theta[j]);
      const double dm = wrap_angle(theta[j] - theta[(j + n_ - 1) % n_]);
      kappa[j] = (dp + dm) / (2.0 * h_);
      total_turn += dp;
    }
    if (std::abs(std::abs(total_turn) - 2.0 * std::numbers::pi) > 0.5)
      throw TrackValidationError("track heading does not wind once around the loop");
    winding_ = total_turn > 0.0 ? 1 : -1;

    // 5-point moving average (periodic).
    std::vector<double> smooth(n_);
    const long nn = static_cast<long>(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      double acc = 0.0;
      for (long k = -2; k <= 2; ++k)
        acc += kappa[static_cast<std::size_t>((static_cast<long>(j) + k + nn) % nn)];
      smooth[j] = acc / 5.0;
    }
    kappa_grid_ = smooth;
    sk_ = PeriodicCubicSpline(smooth, h_);
    swl_ = PeriodicCubicSpline(wl, h_);
    swr_ = PeriodicCubicSpline(wr, h_);
    max_corridor_ = 0.0;
    for (std::size_t j = 0; j < n_; ++j)
      max_corridor_ = std::max(max_corridor_, wl[j] + wr[j]);
  }

  double length() const { return length_; }
  double grid_step() const { return h_; }
  std::size_t grid_size() const { return n_; }
  int winding() const { return winding_; }
  const std::vector<double>& curvature_grid() const { return kappa_grid_; }

  double curvature(double s) const { return sk_(s); }
  double width_left(double s) const { return swl_(s); }
  double width_right(double s) const { return swr_(s); }

  Vec2 position(double s) const { return {sx_(s), sy_(s)}; }

  double tangent_heading(double s) const {
    return std::atan2(sy_.deriv(s), sx_.deriv(s));
  }

  /// (s, n, mu) -> (x, y, heading): centerline(s) + n * left-normal(s).
  void curv_to_cart(double s, double n, double mu, double& x, double& y,
                    double& heading) const {
    const double w = wrap_periodic(s, length_);
    const Vec2 c{sx_(w), sy_(w)};
    Vec2 t{sx_.deriv(w), sy_.deriv(w)};
    const double tn = t.norm();
    t = {t.x / tn, t.y / tn};
    const Vec2 nrm = t.perp();
    x = c.x + n * nrm.x;
    y = c.y + n * nrm.y;
    heading = wrap_angle(std::atan2(t.y, t.x) + mu);
  }

  /// Inverse of curv_to_cart by Newton projection seeded at s_hint
  /// (required within ~L/4 of the true arc length).
  void cart_to_curv(double x, double y, double heading, double s_hint, double& s,
                    double& n, double& mu) const {
    const Vec2 p{x, y};
    double si = wrap_periodic(s_hint, length_);
    const int max_iters = 50;
    int it = 0;
    for (; it < max_iters; ++it) {
      const Vec2 c{sx_(si), sy_(si)};
      const Vec2 d1{sx_.deriv(si), sy_.deriv(si)};
      const Vec2 d2{sx_.deriv2(si), sy_.deriv2(si)};
      const Vec2 e = p - c;
      const double phi = e.dot(d1);
      const double dphi = -d1.dot(d1) + e.dot(d2);
      if (std::abs(dphi) < 1e-12)
        throw ProjectionError("projection stalled: degenerate derivative", si, it);
      const double step = phi / dphi;
      si -= step;
      if (std::abs(step) > length_ / 3.0)
        throw ProjectionError("projection diverged from hint", si, it);
      if (std::abs(step) < 1e-12 * std::max(1.0, length_)) break;
    }
    if (it == max_iters)
      throw ProjectionError("projection failed to converge in 50 iterations", si, it);
    si = wrap_periodic(si, length_);
    const Vec2 c{sx_(si), sy_(si)};
    Vec2 t{sx_.deriv(si), sy_.deriv(si)};
    const double tn = t.norm();
    t = {t.x / tn, t.y / tn};
    const Vec2 e = p - c;
    const double nv = e.dot(t.perp());
    if (std::abs(nv) > 2.0 * max_corridor_)
      throw ProjectionError("query point outside working corridor", si, it);
    s = si;
    n = nv;
    mu = wrap_angle(heading - std::atan2(t.y, t.x));
  }

 private:
  PeriodicCubicSpline sx_, sy_, sk_, swl_, swr_;
  std::vector<double> kappa_grid_;
  double length_ = 0.0;
  double h_ = 0.0;
  std::size_t n_ = 0;
  int winding_ = 1;
  double max_corridor_ = 0.0;
};

inline ArcLengthPath parametrize(const Track& track, double resample_step) {
  return ArcLengthPath(track, resample_step);
}

}  // namespace racestack
