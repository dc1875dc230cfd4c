#pragma once

// Monotone rational-quadratic spline on a single bin, written once over a
// generic scalar so the same expression yields values (double) and exact
// local partials (Dual).

#include <array>
#include <cmath>
#include <cstddef>
#include <span>

namespace ccica::spline {

/// Forward-mode dual number with N tangent directions.
template <std::size_t N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)

  static Dual variable(double value, std::size_t slot) {
    Dual x(value);
    x.d[slot] = 1.0;
    return x;
  }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const double inv = 1.0 / (b.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
    return r;
  }
  friend Dual log(const Dual& a) {
    Dual r(std::log(a.v));
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] / a.v;
    return r;
  }
};

using std::log;

template <typename T>
struct BinResult {
  T y;
  T logdet;
};

/// Rational-quadratic map of x inside the bin [xk, xk1] -> [yk, yk1] with
/// boundary derivatives dk, dk1 (all strictly positive widths/derivatives).
template <typename T>
BinResult<T> rq_bin_forward(const T& x, const T& xk, const T& xk1, const T& yk, const T& yk1, const T& dk,
                            const T& dk1) {
  const T w = xk1 - xk;
  const T h = yk1 - yk;
  const T s = h / w;
  const T xi = (x - xk) / w;
  const T one(1.0);
  const T omx = one - xi;
  const T xi1mxi = xi * omx;
  const T denom = s + (dk1 + dk - T(2.0) * s) * xi1mxi;
  const T y = yk + h * (s * xi * xi + dk * xi1mxi) / denom;
  const T num = s * s * (dk1 * xi * xi + T(2.0) * s * xi1mxi + dk * omx * omx);
  const T logdet = log(num) - T(2.0) * log(denom);
  return {y, logdet};
}

/// Inverse of rq_bin_forward for y inside [yk, yk1].
inline double rq_bin_inverse(double y, double xk, double xk1, double yk, double yk1, double dk, double dk1) {
  const double w = xk1 - xk;
  const double h = yk1 - yk;
  const double s = h / w;
  const double dy = y - yk;
  const double c2 = dk1 + dk - 2.0 * s;
  const double a = h * (s - dk) + dy * c2;
  const double b = h * dk - dy * c2;
  const double c = -s * dy;
  const double disc = std::max(b * b - 4.0 * a * c, 0.0);
  // Numerically stable root of a xi^2 + b xi + c = 0 lying in [0, 1].
  const double xi = (2.0 * c) / (-b - std::sqrt(disc));
  return xk + xi * w;
}

/// Index k with knots[k] <= x < knots[k+1], clamped to the last bin.
inline std::size_t find_bin(std::span<const double> knots, double x) {
  const std::size_t bins = knots.size() - 1;
  std::size_t lo = 0, hi = bins;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (x >= knots[mid]) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace ccica::spline
