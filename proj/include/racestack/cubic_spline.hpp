#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "racestack/geometry.hpp"

namespace racestack {

/// Periodic piecewise-linear interpolant on a uniform grid s_i = i*h,
/// values repeating with the given period (= n*h).
class PeriodicLinear {
 public:
  PeriodicLinear() = default;
  PeriodicLinear(std::vector<double> values, double step)
      : v_(std::move(values)), h_(step) {
    if (v_.size() < 2 || h_ <= 0.0)
      throw std::invalid_argument("PeriodicLinear: need >=2 values and step > 0");
    period_ = h_ * static_cast<double>(v_.size());
  }

  double period() const { return period_; }

  double operator()(double s) const {
    const double w = wrap_periodic(s, period_);
    std::size_t i = static_cast<std::size_t>(w / h_);
    if (i >= v_.size()) i = v_.size() - 1;
    const double t = w - static_cast<double>(i) * h_;
    const std::size_t j = (i + 1) % v_.size();
    return v_[i] + (t / h_) * (v_[j] - v_[i]);
  }

 private:
  std::vector<double> v_;
  double h_ = 0.0;
  double period_ = 0.0;
};

/// Periodic cubic spline on a uniform grid s_i = i*h with period n*h.
/// Second derivatives come from the cyclic tridiagonal system
/// m_{i-1} + 4 m_i + m_{i+1} = 6 (f_{i-1} - 2 f_i + f_{i+1}) / h^2,
/// solved with the Sherman-Morrison corner correction.
class PeriodicCubicSpline {
 public:
  PeriodicCubicSpline() = default;
  PeriodicCubicSpline(std::vector<double> values, double step)
      : f_(std::move(values)), h_(step) {
    const std::size_t n = f_.size();
    if (n < 4 || h_ <= 0.0)
      throw std::invalid_argument("PeriodicCubicSpline: need >=4 values and step > 0");
    period_ = h_ * static_cast<double>(n);

    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double fm = f_[(i + n - 1) % n];
      const double fp = f_[(i + 1) % n];
      d[i] = 6.0 * (fm - 2.0 * f_[i] + fp) / (h_ * h_);
    }

    // Cyclic Thomas: corners A[0][n-1] = A[n-1][0] = 1, diagonal 4.
    const double gamma = -4.0;
    std::vector<double> diag(n, 4.0);
    diag[0] -= gamma;
    diag[n - 1] -= 1.0 / gamma;
    std::vector<double> u(n, 0.0);
    u[0] = gamma;
    u[n - 1] = 1.0;

    std::vector<double> x1 = solve_tridiag(diag, d);
    std::vector<double> x2 = solve_tridiag(diag, u);
    const double vx1 = x1[0] + x1[n - 1] / gamma;
    const double vx2 = x2[0] + x2[n - 1] / gamma;
    const double fact = vx1 / (1.0 + vx2);
    m_.resize(n);
    for (std::size_t i = 0; i < n; ++i) m_[i] = x1[i] - fact * x2[i];
  }

  double period() const { return period_; }

  double operator()(double s) const { return eval<0>(s); }
  double deriv(double s) const { return eval<1>(s); }
  double deriv2(double s) const { return eval<2>(s); }

 private:
  template <int Order>
  double eval(double s) const {
    const std::size_t n = f_.size();
    const double w = wrap_periodic(s, period_);
    std::size_t i = static_cast<std::size_t>(w / h_);
    if (i >= n) i = n - 1;
    const std::size_t j = (i + 1) % n;
    const double t = w - static_cast<double>(i) * h_;
    const double ht = h_ - t;
    if constexpr (Order == 0) {
      return m_[i] * ht * ht * ht / (6.0 * h_) + m_[j] * t * t * t / (6.0 * h_) +
             (f_[i] / h_ - m_[i] * h_ / 6.0) * ht + (f_[j] / h_ - m_[j] * h_ / 6.0) * t;
    } else if constexpr (Order == 1) {
      return -m_[i] * ht * ht / (2.0 * h_) + m_[j] * t * t / (2.0 * h_) -
             (f_[i] / h_ - m_[i] * h_ / 6.0) + (f_[j] / h_ - m_[j] * h_ / 6.0);
    } else {
      return (m_[i] * ht + m_[j] * t) / h_;
    }
  }

  // Tridiagonal solve with unit off-diagonals and the given diagonal.
  static std::vector<double> solve_tridiag(const std::vector<double>& diag,
                                           const std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    std::vector<double> c(n, 0.0), x(n, 0.0);
    double beta = diag[0];
    x[0] = rhs[0] / beta;
    for (std::size_t i = 1; i < n; ++i) {
      c[i] = 1.0 / beta;
      beta = diag[i] - c[i];
      x[i] = (rhs[i] - x[i - 1]) / beta;
    }
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= c[i + 1] * x[i + 1];
    return x;
  }

  std::vector<double> f_;
  std::vector<double> m_;
  double h_ = 0.0;
  double period_ = 0.0;
};

}  // namespace racestack
