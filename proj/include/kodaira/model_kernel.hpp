#pragma once

// Closed-form heat kernels of the model operators on C^n with curvature
// diag(λ). Kernels are densities with respect to dv = i^n dz∧dz̄ (= 2^n times
// Lebesgue measure in x, y) unless `Measure::lebesgue` is requested.

#include <cmath>
#include <vector>

#include "kodaira/errors.hpp"
#include "kodaira/exterior.hpp"
#include "kodaira/geometry.hpp"
#include "kodaira/linalg.hpp"
#include "kodaira/numerics.hpp"

namespace kodaira {

struct ModelSpec {
  int n = 1;
  std::vector<double> lambda;
  int q = 0;

  ModelSpec() : lambda{1.0} {}
  ModelSpec(int n_, std::vector<double> lambda_, int q_) : n(n_), lambda(std::move(lambda_)), q(q_) { validate(); }

  void validate() const {
    if (n < 1 || n > max_complex_dimension) throw ArgumentError("model: n out of range");
    if (static_cast<int>(lambda.size()) != n) throw ArgumentError("model: lambda must have n entries");
    for (double l : lambda)
      if (!std::isfinite(l)) throw ArgumentError("model: non-finite lambda");
    if (q < 0 || q > n) throw ArgumentError("model: q out of range");
  }

  /// Σ_{j∈J} λ_j for each basis form of degree q.
  std::vector<double> theta0() const {
    const FormBasis basis(n, q);
    std::vector<double> out(basis.size(), 0.0);
    for (std::size_t p = 0; p < basis.size(); ++p)
      for (int j : basis.members(p)) out[p] += lambda[static_cast<std::size_t>(j)];
    return out;
  }
};

enum class Measure { hermitian, lebesgue };

/// The two candidate readings of the Gaussian exponent. `symmetric` uses the
/// same coth argument on |z|² and |w|²; `as_printed` doubles it on |w|².
/// Only `symmetric` solves the heat equation.
enum class MehlerReading { symmetric, as_printed };

inline double measure_factor(int n, Measure m) { return m == Measure::lebesgue ? std::ldexp(1.0, n) : 1.0; }

struct KernelValue {
  FiberEndomorphism value;
  CVector z;
  CVector w;
  double t;
};

/// e^{-sH}(z,w) where ½H is the model operator on functions.
inline Complex mehler_scalar(const ModelSpec& spec, double s, const CVector& z, const CVector& w,
                             MehlerReading reading = MehlerReading::symmetric, Measure measure = Measure::hermitian) {
  spec.validate();
  if (!(s > 0.0)) throw ArgumentError("mehler_scalar: t must be positive");
  if (z.size() != spec.n || w.size() != spec.n) throw ArgumentError("mehler_scalar: point dimension mismatch");
  const bool log_space = spec.n > defaults::log_product_min_dimension;
  double prefactor = 1.0, log_prefactor = 0.0;
  Complex exponent = 0.0;
  for (int j = 0; j < spec.n; ++j) {
    const double l = spec.lambda[static_cast<std::size_t>(j)];
    const double p = x_over_one_minus_exp(2.0 * s * l) / (4.0 * pi * s);
    if (log_space)
      log_prefactor += std::log(p);
    else
      prefactor *= p;
    const double a = x_coth_x(s * l) / (2.0 * s);
    const double aw = reading == MehlerReading::symmetric ? a : x_coth_x(2.0 * s * l) / (4.0 * s);
    const Complex zw = z(j) * std::conj(w(j));
    exponent += -a * std::norm(z(j)) - aw * std::norm(w(j)) + 2.0 * a * zw.real() + Complex(0.0, l * zw.imag());
  }
  if (log_space) return std::exp(Complex(log_prefactor, 0.0) + exponent) * measure_factor(spec.n, measure);
  return prefactor * std::exp(exponent) * measure_factor(spec.n, measure);
}

/// e^{-t□^q_0}(z,w) = e^{-tΘ₀} e^{-(t/2)H}(z,w).
inline KernelValue model_kernel(const ModelSpec& spec, double t, const CVector& z, const CVector& w,
                                MehlerReading reading = MehlerReading::symmetric, Measure measure = Measure::hermitian) {
  if (!(t > 0.0)) throw ArgumentError("model_kernel: t must be positive");
  const Complex scalar = mehler_scalar(spec, 0.5 * t, z, w, reading, measure);
  const auto theta = spec.theta0();
  CMatrix m = CMatrix::Zero(static_cast<Eigen::Index>(theta.size()), static_cast<Eigen::Index>(theta.size()));
  for (std::size_t p = 0; p < theta.size(); ++p)
    m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)) = scalar * std::exp(-t * theta[p]);
  return {FiberEndomorphism(spec.n, spec.q, std::move(m)), z, w, t};
}

/// Kernel of the weighted-gauge operator: e^{φ₀(z)/2} e^{-t□^q_0}(z,w) e^{-φ₀(w)/2}.
inline KernelValue weighted_kernel(const ModelSpec& spec, double t, const CVector& z, const CVector& w,
                                   Measure measure = Measure::hermitian) {
  KernelValue k = model_kernel(spec, t, z, w, MehlerReading::symmetric, measure);
  double dphi = 0.0;
  for (int j = 0; j < spec.n; ++j)
    dphi += spec.lambda[static_cast<std::size_t>(j)] * (std::norm(z(j)) - std::norm(w(j)));
  k.value.matrix *= std::exp(0.5 * dphi);
  return k;
}

/// Diagonal at the origin from the one-dimensional product formula.
inline FiberEndomorphism model_diagonal(const ModelSpec& spec, double t, Measure measure = Measure::hermitian) {
  spec.validate();
  if (!(t > 0.0)) throw ArgumentError("model_diagonal: t must be positive");
  const FormBasis basis(spec.n, spec.q);
  const bool log_space = spec.n > defaults::log_product_min_dimension;
  CMatrix m = CMatrix::Zero(static_cast<Eigen::Index>(basis.size()), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t p = 0; p < basis.size(); ++p) {
    const Mask J = basis.mask(p);
    double prod = 1.0, log_prod = 0.0;
    for (int j = 0; j < spec.n; ++j) {
      const double l = spec.lambda[static_cast<std::size_t>(j)];
      // λ(1 + (e^{-tλ} - 1)Π_j) / (2π(1 - e^{-tλ}))
      double f = x_over_one_minus_exp(t * l) / (2.0 * pi * t);
      if (J & (Mask{1} << j)) f *= std::exp(-t * l);
      if (log_space)
        log_prod += std::log(f);
      else
        prod *= f;
    }
    m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)) =
        (log_space ? std::exp(log_prod) : prod) * measure_factor(spec.n, measure);
  }
  return {spec.n, spec.q, std::move(m)};
}

/// Relative defect |∂_t K + □K| / (|∂_t K| + |K|) of one diagonal fiber entry
/// of the model kernel, differentiated in t and in z by fourth-order stencils.
inline double heat_equation_residual(const ModelSpec& spec, double t, const CVector& z, const CVector& w,
                                     MehlerReading reading = MehlerReading::symmetric, std::size_t form = 0,
                                     double step = 1e-3) {
  spec.validate();
  const auto theta = spec.theta0();
  if (form >= theta.size()) throw ArgumentError("heat_equation_residual: form index out of range");
  const auto K = [&](double s, const CVector& x) {
    return model_kernel(spec, s, x, w, reading).value.matrix(static_cast<Eigen::Index>(form),
                                                            static_cast<Eigen::Index>(form));
  };
  const auto moved = [&](int axis, double d) {
    CVector x = z;
    x(axis / 2) += axis % 2 == 0 ? Complex(d, 0.0) : Complex(0.0, d);
    return K(t, x);
  };
  const double ht = 1e-4 * t;
  const Complex dt = (-K(t + 2 * ht, z) + 8.0 * K(t + ht, z) - 8.0 * K(t - ht, z) + K(t - 2 * ht, z)) / (12.0 * ht);
  const Complex k0 = K(t, z);
  const Complex I(0.0, 1.0);
  Complex box = theta[form] * k0;
  for (int j = 0; j < spec.n; ++j) {
    const double l = spec.lambda[static_cast<std::size_t>(j)];
    const double x = z(j).real(), y = z(j).imag();
    Complex lap = 0.0, dx = 0.0, dy = 0.0;
    for (int axis : {2 * j, 2 * j + 1}) {
      const Complex p1 = moved(axis, step), m1 = moved(axis, -step), p2 = moved(axis, 2 * step), m2 = moved(axis, -2 * step);
      lap += (-p2 + 16.0 * p1 - 30.0 * k0 + 16.0 * m1 - m2) / (12.0 * step * step);
      (axis == 2 * j ? dx : dy) = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * step);
    }
    box += -0.25 * lap + 0.5 * I * l * (x * dy - y * dx) + (0.25 * l * l * (x * x + y * y) - 0.5 * l) * k0;
  }
  return std::abs(dt + box) / (std::abs(dt) + std::abs(k0));
}

}  // namespace kodaira
