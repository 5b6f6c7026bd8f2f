#pragma once

#include <cmath>
#include <complex>
#include <functional>

#include <Eigen/Dense>

#include "kodaira/tolerances.hpp"

namespace kodaira {

/// x / (1 - e^{-x}), continuous at 0 with value 1. Uses the truncated
/// Bernoulli series 1 + x/2 + x²/12 - x⁴/720 below `series_below`.
inline double x_over_one_minus_exp(double x, double series_below = 1e-8) {
  if (std::abs(x) < series_below) {
    const double x2 = x * x;
    return 1.0 + 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0;
  }
  return x / (-std::expm1(-x));
}

/// x·coth(x), continuous at 0 with value 1.
inline double x_coth_x(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 + x2 / 3.0 - x2 * x2 / 45.0;
  }
  return x / std::tanh(x);
}

/// Central-difference derivatives of functions of n complex variables,
/// treated as functions of the 2n real coordinates (x_1, y_1, ..., x_n, y_n).
namespace fd {

inline Eigen::VectorXcd shifted(const Eigen::VectorXcd& z, int axis, double delta) {
  Eigen::VectorXcd out = z;
  const int j = axis / 2;
  out(j) += (axis % 2 == 0) ? std::complex<double>(delta, 0.0) : std::complex<double>(0.0, delta);
  return out;
}

/// 4th-order ∂f/∂x_axis.
template <class F>
auto partial(const F& f, const Eigen::VectorXcd& z, int axis, double h = defaults::fd_step) {
  return (-f(shifted(z, axis, 2 * h)) + 8.0 * f(shifted(z, axis, h)) - 8.0 * f(shifted(z, axis, -h)) +
          f(shifted(z, axis, -2 * h))) /
         (12.0 * h);
}

/// Wirtinger gradient ∂f/∂z̄_j = ½(∂_x + i∂_y) f for scalar f.
template <class F>
Eigen::VectorXcd dbar_gradient(const F& f, const Eigen::VectorXcd& z, double h = defaults::fd_step) {
  const auto n = z.size();
  Eigen::VectorXcd g(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto fx = partial(f, z, static_cast<int>(2 * j), h);
    const auto fy = partial(f, z, static_cast<int>(2 * j + 1), h);
    g(j) = 0.5 * (std::complex<double>(fx) + std::complex<double>(0.0, 1.0) * std::complex<double>(fy));
  }
  return g;
}

/// Symmetric real Hessian (2n × 2n) of a real function, 4th order.
template <class F>
Eigen::MatrixXd real_hessian(const F& f, const Eigen::VectorXcd& z, double h = defaults::fd_step) {
  const int m = static_cast<int>(2 * z.size());
  Eigen::MatrixXd H(m, m);
  const double f0 = f(z);
  static constexpr double c[4] = {1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0};
  static constexpr double s[4] = {-2.0, -1.0, 1.0, 2.0};
  for (int a = 0; a < m; ++a) {
    H(a, a) = (-f(shifted(z, a, 2 * h)) + 16.0 * f(shifted(z, a, h)) - 30.0 * f0 + 16.0 * f(shifted(z, a, -h)) -
               f(shifted(z, a, -2 * h))) /
              (12.0 * h * h);
    for (int b = a + 1; b < m; ++b) {
      double acc = 0.0;
      for (int p = 0; p < 4; ++p)
        for (int q = 0; q < 4; ++q) acc += c[p] * c[q] * f(shifted(shifted(z, a, s[p] * h), b, s[q] * h));
      H(a, b) = H(b, a) = acc / (h * h);
    }
  }
  return H;
}

/// Complex Hessian ∂²f/∂z_i∂z̄_j assembled from the real Hessian; exactly
/// Hermitian because the real Hessian is symmetric by construction.
inline Eigen::MatrixXcd complex_hessian_from_real(const Eigen::MatrixXd& S) {
  const auto n = S.rows() / 2;
  Eigen::MatrixXcd H(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double xx = S(2 * i, 2 * j), yy = S(2 * i + 1, 2 * j + 1);
      const double xy = S(2 * i, 2 * j + 1), yx = S(2 * i + 1, 2 * j);
      H(i, j) = 0.25 * std::complex<double>(xx + yy, xy - yx);
    }
  return H;
}

}  // namespace fd
}  // namespace kodaira
