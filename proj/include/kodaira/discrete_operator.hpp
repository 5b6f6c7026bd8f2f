#pragma once

// Finite-difference Kodaira Laplacians on a truncated grid in R^{2n},
// assembled in the symmetric gauge as D†D + DD† from a discrete ∂̄ so that
// Hermiticity and positivity hold exactly.
//
// Unknowns are ordered site-major: index = site · binomial(n,q) + form.
// Grid axes are (x_1, y_1, ..., x_n, y_n), axis 0 varying fastest.

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "kodaira/errors.hpp"
#include "kodaira/exterior.hpp"
#include "kodaira/geometry.hpp"
#include "kodaira/linalg.hpp"
#include "kodaira/model_kernel.hpp"
#include "kodaira/numerics.hpp"
#include "kodaira/tolerances.hpp"

namespace kodaira {

class GridSpec {
 public:
  GridSpec(int n, double radius, double spacing, std::size_t site_cap = defaults::grid_site_cap)
      : n_(n), radius_(radius), spacing_(spacing) {
    if (n < 1 || n > max_complex_dimension) throw ArgumentError("grid: n out of range");
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ArgumentError("grid: radius must be positive");
    if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ArgumentError("grid: spacing must be positive");
    const double cells = 2.0 * radius / spacing;
    const double rounded = std::round(cells);
    if (std::abs(cells - rounded) > 1e-9 * std::max(1.0, rounded) || static_cast<long long>(rounded) % 2 != 0 ||
        rounded < 2)
      throw ArgumentError("grid: 2r/h must be an even integer");
    per_axis_ = static_cast<int>(rounded) + 1;
    double sites = std::pow(static_cast<double>(per_axis_), 2 * n);
    if (sites > static_cast<double>(site_cap))
      throw ResourceError("grid: " + std::to_string(static_cast<long long>(sites)) + " sites exceed the cap of " +
                          std::to_string(site_cap));
    sites_ = static_cast<std::size_t>(sites);
    strides_.resize(static_cast<std::size_t>(2 * n));
    std::size_t s = 1;
    for (auto& st : strides_) {
      st = s;
      s *= static_cast<std::size_t>(per_axis_);
    }
  }

  /// Smallest radius ≥ r for which 2r/h is an even integer.
  static GridSpec snapped(int n, double radius, double spacing, std::size_t site_cap = defaults::grid_site_cap) {
    const double half_cells = std::ceil(radius / spacing - 1e-9);
    return GridSpec(n, half_cells * spacing, spacing, site_cap);
  }

  int n() const { return n_; }
  double radius() const { return radius_; }
  double spacing() const { return spacing_; }
  int points_per_axis() const { return per_axis_; }
  std::size_t sites() const { return sites_; }
  std::size_t stride(int axis) const { return strides_[static_cast<std::size_t>(axis)]; }

  int axis_index(std::size_t site, int axis) const {
    return static_cast<int>((site / strides_[static_cast<std::size_t>(axis)]) % static_cast<std::size_t>(per_axis_));
  }
  double coordinate(std::size_t site, int axis) const { return -radius_ + spacing_ * axis_index(site, axis); }

  CVector point(std::size_t site) const {
    CVector z(n_);
    for (int j = 0; j < n_; ++j) z(j) = Complex(coordinate(site, 2 * j), coordinate(site, 2 * j + 1));
    return z;
  }

  std::size_t origin() const {
    const auto c = static_cast<std::size_t>(per_axis_ / 2);
    std::size_t s = 0;
    for (auto st : strides_) s += c * st;
    return s;
  }

  /// Site from per-axis integer offsets relative to the origin.
  std::size_t site_at(const std::vector<int>& offsets) const {
    if (offsets.size() != strides_.size()) throw ArgumentError("grid: offset vector has wrong length");
    std::size_t s = 0;
    for (std::size_t a = 0; a < offsets.size(); ++a) {
      const int i = per_axis_ / 2 + offsets[a];
      if (i < 0 || i >= per_axis_) throw ArgumentError("grid: site outside the grid");
      s += static_cast<std::size_t>(i) * strides_[a];
    }
    return s;
  }

  /// h^{2n}
  double cell_lebesgue() const { return std::pow(spacing_, 2 * n_); }

  /// Cell volume in the given measure (dv = 2^n Lebesgue).
  double cell_volume(Measure m = Measure::hermitian) const {
    return cell_lebesgue() * (m == Measure::hermitian ? std::ldexp(1.0, n_) : 1.0);
  }

 private:
  int n_;
  double radius_;
  double spacing_;
  int per_axis_ = 0;
  std::size_t sites_ = 0;
  std::vector<std::size_t> strides_;
};

/// Chart-level deviation from the flat model, in unscaled coordinates.
struct PerturbationSpec {
  /// r_{j,s}(z) as an n×n matrix; Z_j = ∂_{z_j} + Σ_s r_{j,s} ∂_{z_s}.
  std::function<CMatrix(const CVector&)> metric;
  /// α_j(z), the zero-order term of the adjoint.
  std::function<CVector(const CVector&)> alpha;
  /// Volume density m(z) with m(0) = 1.
  std::function<double(const CVector&)> volume_density;
  /// Optional ∂ log m / ∂z̄_j; finite differences otherwise.
  std::function<CVector(const CVector&)> log_volume_dbar;

  bool trivial() const { return !metric && !alpha && !volume_density; }

  void validate(int n) const {
    const CVector o = CVector::Zero(n);
    if (metric) {
      const CMatrix r0 = metric(o);
      if (r0.rows() != n || r0.cols() != n) throw ArgumentError("perturbation: metric coefficients must be n×n");
      if (r0.cwiseAbs().maxCoeff() > 1e-12) throw ArgumentError("perturbation: r_{j,s}(0) must vanish");
    }
    if (alpha && alpha(o).size() != n) throw ArgumentError("perturbation: alpha must have n entries");
    if (volume_density && std::abs(volume_density(o) - 1.0) > 1e-12)
      throw ArgumentError("perturbation: volume density must equal 1 at the origin");
  }
};

struct DiscreteOperator {
  SparseMatrix matrix;
  int n = 1;
  int q = 0;
  int k = 0;  // 0 for the unscaled model
  GridSpec grid;
  std::string gauge = "symmetric";

  std::size_t fiber_dim() const { return binomial(n, q); }
  Eigen::Index dim() const { return matrix.rows(); }
  Eigen::Index index(std::size_t site, std::size_t form) const {
    return static_cast<Eigen::Index>(site * fiber_dim() + form);
  }
  /// Per-site weight of the flat inner product.
  double inner_product_weight() const { return grid.cell_lebesgue(); }
};

namespace detail {

/// Local coefficients of the conjugated ∂̄ at one grid point (scaled coordinates).
struct DbarCoefficients {
  CMatrix gbar;                              // Ḡ_{js}: Z̄_j = Σ_s Ḡ_{js} ∂_{z̄_s}
  CVector zero_order;                        // ½ Z̄_j ψ + ᾱ_j / √k
  std::vector<CMatrix> torsion;              // torsion[j](a,b): ∂̄ω̄^j = Σ S^j_{ab} ω̄^a∧ω̄^b
};

class ScaledCoefficients {
 public:
  ScaledCoefficients(const WeightFunction& weight, const PerturbationSpec& pert, int k)
      : weight_(weight), pert_(pert), k_(k), root_k_(std::sqrt(static_cast<double>(k))) {}

  CMatrix gbar(const CVector& z) const {
    const int n = weight_.n();
    CMatrix G = CMatrix::Identity(n, n);
    if (pert_.metric) G += pert_.metric(z / root_k_);
    return G.conjugate();
  }

  /// ∂ψ/∂z̄_s for ψ(z) = kφ(z/√k) - log m(z/√k).
  CVector dbar_psi(const CVector& z) const {
    const int n = weight_.n();
    CVector g(n);
    for (int s = 0; s < n; ++s) g(s) = weight_.lambda()[static_cast<std::size_t>(s)] * z(s);
    const CVector x = z / root_k_;
    if (!weight_.perturbation().is_zero()) g += root_k_ * weight_.perturbation_dbar(x);
    if (pert_.volume_density) {
      CVector lm;
      if (pert_.log_volume_dbar)
        lm = pert_.log_volume_dbar(x);
      else
        lm = fd::dbar_gradient([this](const CVector& u) { return std::log(pert_.volume_density(u)); }, x);
      g -= lm / root_k_;
    }
    return g;
  }

  DbarCoefficients at(const CVector& z, bool need_torsion) const {
    const int n = weight_.n();
    const CVector x = z / root_k_;
    if (!weight_.in_domain(x)) throw DomainError("assemble: grid point leaves the weight's chart");
    if (pert_.volume_density && !(pert_.volume_density(x) > 0.0))
      throw DomainError("assemble: volume density must be positive on the chart");
    DbarCoefficients c;
    c.gbar = gbar(z);
    c.zero_order = 0.5 * (c.gbar * dbar_psi(z));
    if (pert_.alpha) c.zero_order += pert_.alpha(x).conjugate() / root_k_;
    if (need_torsion && pert_.metric) {
      // B = (Ḡᵀ)^{-1}; S^j_{ab} = Σ_{t,s} ∂_{z̄_t} B_{js} Ḡ_{at} Ḡ_{bs}
      std::vector<CMatrix> dB(static_cast<std::size_t>(n));
      for (int t = 0; t < n; ++t) {
        auto B_at = [this](const CVector& u) -> CMatrix { return gbar(u).transpose().inverse(); };
        const double h = defaults::fd_step * std::max(1.0, root_k_);
        auto partial = [&](int axis) {
          return CMatrix((-B_at(fd::shifted(z, axis, 2 * h)) + 8.0 * B_at(fd::shifted(z, axis, h)) -
                          8.0 * B_at(fd::shifted(z, axis, -h)) + B_at(fd::shifted(z, axis, -2 * h))) /
                         (12.0 * h));
        };
        dB[static_cast<std::size_t>(t)] = 0.5 * (partial(2 * t) + Complex(0.0, 1.0) * partial(2 * t + 1));
      }
      c.torsion.assign(static_cast<std::size_t>(n), CMatrix::Zero(n, n));
      for (int j = 0; j < n; ++j)
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) {
            Complex s = 0.0;
            for (int t = 0; t < n; ++t)
              for (int u = 0; u < n; ++u) s += dB[static_cast<std::size_t>(t)](j, u) * c.gbar(a, t) * c.gbar(b, u);
            c.torsion[static_cast<std::size_t>(j)](a, b) = s;
          }
    }
    return c;
  }

 private:
  const WeightFunction& weight_;
  const PerturbationSpec& pert_;
  int k_;
  double root_k_;
};

/// Conjugated ∂̄ from degree q to q+1 as a sparse matrix.
inline SparseMatrix assemble_dbar(const ScaledCoefficients& coeffs, const GridSpec& grid, int q) {
  const int n = grid.n();
  const FormBasis from(n, q), to(n, q + 1);
  const auto d_from = from.size(), d_to = to.size();
  const double h = grid.spacing();
  const int N = grid.points_per_axis();
  std::vector<Triplet> trip;
  trip.reserve(grid.sites() * d_from * static_cast<std::size_t>(n) * static_cast<std::size_t>(4 * n + 1));
  for (std::size_t site = 0; site < grid.sites(); ++site) {
    const auto c = coeffs.at(grid.point(site), q >= 1);
    for (std::size_t col = 0; col < d_from; ++col) {
      const Mask J = from.mask(col);
      const auto col_index = static_cast<int>(site * d_from + col);
      for (int j = 0; j < n; ++j) {
        const auto w = wedge(j, J);
        if (!w) continue;
        const auto row_index = static_cast<int>(site * d_to + static_cast<std::size_t>(to.position(w->mask)));
        const double sign = w->sign;
        trip.emplace_back(row_index, static_cast<int>(site * d_from + col), sign * c.zero_order(j));
        // Σ_s Ḡ_{js} ½(D_{x_s} + i D_{y_s}), centered, zero outside the grid
        for (int s = 0; s < n; ++s) {
          const Complex g = c.gbar(j, s);
          if (g == Complex(0.0)) continue;
          for (int part = 0; part < 2; ++part) {
            const int axis = 2 * s + part;
            const Complex coef = sign * g * 0.5 * (part == 0 ? Complex(1.0, 0.0) : Complex(0.0, 1.0)) / (2.0 * h);
            const int i = grid.axis_index(site, axis);
            const auto st = grid.stride(axis);
            if (i + 1 < N) trip.emplace_back(row_index, static_cast<int>((site + st) * d_from + col), coef);
            if (i > 0) trip.emplace_back(row_index, static_cast<int>((site - st) * d_from + col), -coef);
          }
        }
      }
      // torsion: Σ_j Σ_{ab} S^j_{ab} ε_a ε_b ι_j
      if (!c.torsion.empty()) {
        for (int j = 0; j < n; ++j) {
          const auto cj = contract(j, J);
          if (!cj) continue;
          for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
              const Complex s = c.torsion[static_cast<std::size_t>(j)](a, b);
              if (s == Complex(0.0)) continue;
              const auto wb = wedge(b, cj->mask);
              if (!wb) continue;
              const auto wa = wedge(a, wb->mask);
              if (!wa) continue;
              const auto row_index = static_cast<int>(site * d_to + static_cast<std::size_t>(to.position(wa->mask)));
              trip.emplace_back(row_index, col_index, static_cast<double>(cj->sign * wb->sign * wa->sign) * s);
            }
        }
      }
    }
  }
  SparseMatrix D(static_cast<Eigen::Index>(grid.sites() * d_to), static_cast<Eigen::Index>(grid.sites() * d_from));
  D.setFromTriplets(trip.begin(), trip.end());
  return D;
}

/// (h²/16) Σ_axes (Δ_axis)² on scalars: lifts the checkerboard modes of the
/// centered ∂̄ and makes the kinetic part exactly ¼ of the 5-point Laplacian.
/// The outermost layer also receives the ghost-row terms 1/(8h²) per axis that
/// zero extension of D and Δ would contribute, which closes the scheme with a
/// true Dirichlet condition instead of a Robin-like one.
inline SparseMatrix stabilizer(const GridSpec& grid) {
  const double h = grid.spacing();
  const int N = grid.points_per_axis();
  const auto S = static_cast<Eigen::Index>(grid.sites());
  SparseMatrix W(S, S);
  for (int axis = 0; axis < 2 * grid.n(); ++axis) {
    std::vector<Triplet> trip;
    trip.reserve(grid.sites() * 3);
    const double c = 0.25 / h;  // (h/4) · 1/h²
    const auto st = grid.stride(axis);
    for (std::size_t site = 0; site < grid.sites(); ++site) {
      const int i = grid.axis_index(site, axis);
      trip.emplace_back(static_cast<int>(site), static_cast<int>(site), -2.0 * c);
      if (i + 1 < N) trip.emplace_back(static_cast<int>(site), static_cast<int>(site + st), c);
      if (i > 0) trip.emplace_back(static_cast<int>(site), static_cast<int>(site - st), c);
    }
    SparseMatrix B(S, S);
    B.setFromTriplets(trip.begin(), trip.end());
    W += SparseMatrix(B.adjoint() * B);
  }
  const double ghost = 0.125 / (h * h);
  for (std::size_t site = 0; site < grid.sites(); ++site)
    for (int axis = 0; axis < 2 * grid.n(); ++axis) {
      const int i = grid.axis_index(site, axis);
      if (i == 0 || i == N - 1) W.coeffRef(static_cast<Eigen::Index>(site), static_cast<Eigen::Index>(site)) += ghost;
    }
  return W;
}

inline SparseMatrix kron_identity(const SparseMatrix& A, std::size_t d) {
  if (d == 1) return A;
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(A.nonZeros()) * d);
  for (int c = 0; c < A.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(A, c); it; ++it)
      for (std::size_t f = 0; f < d; ++f)
        trip.emplace_back(static_cast<int>(static_cast<std::size_t>(it.row()) * d + f),
                          static_cast<int>(static_cast<std::size_t>(it.col()) * d + f), it.value());
  SparseMatrix out(A.rows() * static_cast<Eigen::Index>(d), A.cols() * static_cast<Eigen::Index>(d));
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

}  // namespace detail

/// □^q_{(k)} on the grid: D_q†D_q + D_{q-1}D_{q-1}† + stabilizer, with D the
/// scaled ∂̄ conjugated into the symmetric gauge.
inline DiscreteOperator assemble_scaled(const WeightFunction& weight, const PerturbationSpec& pert, int k,
                                        const GridSpec& grid, int q) {
  if (k < 1) throw ArgumentError("assemble_scaled: k must be a positive integer");
  if (grid.n() != weight.n()) throw ArgumentError("assemble_scaled: grid and weight dimensions differ");
  if (q < 0 || q > grid.n()) throw ArgumentError("assemble_scaled: q out of range");
  pert.validate(weight.n());
  const detail::ScaledCoefficients coeffs(weight, pert, k);
  const std::size_t d = binomial(grid.n(), q);
  SparseMatrix A = detail::kron_identity(detail::stabilizer(grid), d);
  if (q < grid.n()) {
    const SparseMatrix D = detail::assemble_dbar(coeffs, grid, q);
    A += SparseMatrix(D.adjoint() * D);
  }
  if (q > 0) {
    const SparseMatrix D = detail::assemble_dbar(coeffs, grid, q - 1);
    A += SparseMatrix(D * D.adjoint());
  }
  A.makeCompressed();
  return {std::move(A), grid.n(), q, k, grid, "symmetric"};
}

/// The model operator □^q_0 for curvature diag(λ).
inline DiscreteOperator assemble_model(const ModelSpec& spec, const GridSpec& grid) {
  spec.validate();
  if (spec.n != grid.n()) throw ArgumentError("assemble_model: spec and grid dimensions differ");
  const WeightFunction weight(spec.lambda);
  DiscreteOperator op = assemble_scaled(weight, PerturbationSpec{}, 1, grid, spec.q);
  op.k = 0;
  return op;
}

/// ‖A - B‖_max / ‖B‖_max.
inline double relative_max_deviation(const SparseMatrix& A, const SparseMatrix& B) {
  return max_abs(SparseMatrix(A - B)) / max_abs(B);
}

struct GaugeCheck {
  bool ok = false;
  double symmetric = 0.0;   // trace of the diagonal block in the symmetric gauge
  double weighted = 0.0;    // same, after conjugation into the weighted gauge
  double relative_difference = 0.0;
};

/// Compares the heat-kernel diagonal block at `site` computed in the
/// symmetric gauge with the one obtained by conjugating the kernel column by
/// e^{±ψ/2} into the weighted gauge.
inline GaugeCheck gauge_diagonal_identity_check(const WeightFunction& weight, int k, const GridSpec& grid,
                                                std::size_t site, const PerturbationSpec& pert = {}, int q = 0,
                                                double t = 1.0, double tol = 1e-10) {
  if (site >= grid.sites()) throw ArgumentError("gauge check: site outside the grid");
  const DiscreteOperator op = assemble_scaled(weight, pert, k, grid, q);
  const std::size_t d = op.fiber_dim();
  const double root_k = std::sqrt(static_cast<double>(k));
  auto psi = [&](std::size_t s) {
    const CVector x = grid.point(s) / root_k;
    double v = k * (weight.quadratic_value(x) + weight.perturbation_value(x));
    if (pert.volume_density) v -= std::log(pert.volume_density(x));
    return v;
  };
  const double psi_site = psi(site);
  KrylovOptions opt;
  opt.tolerance = 1e-12;
  GaugeCheck out;
  for (std::size_t f = 0; f < d; ++f) {
    CVector delta = CVector::Zero(op.dim());
    delta(op.index(site, f)) = 1.0 / grid.cell_volume();
    const CVector col = lanczos_expv(op.matrix, delta, t, opt);
    out.symmetric += col(op.index(site, f)).real();
    // weighted-gauge kernel: e^{ψ(z)/2} K_s(z,w) e^{-ψ(w)/2}, evaluated at z = w = site
    CVector weighted_delta = delta * std::exp(-0.5 * psi_site);
    const CVector wcol = lanczos_expv(op.matrix, weighted_delta, t, opt);
    out.weighted += (std::exp(0.5 * psi(site)) * wcol(op.index(site, f))).real();
  }
  out.relative_difference = std::abs(out.symmetric - out.weighted) / std::max(std::abs(out.symmetric), 1e-300);
  out.ok = out.relative_difference <= tol;
  return out;
}

/// Writes `%%MatrixMarket matrix coordinate complex general` with 1-based indices.
inline void write_matrix_market(std::ostream& out, const SparseMatrix& A) {
  out << "%%MatrixMarket matrix coordinate complex general\n";
  out << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
  char buf[128];
  for (int c = 0; c < A.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(A, c); it; ++it) {
      std::snprintf(buf, sizeof buf, "%lld %lld %.17g %.17g\n", static_cast<long long>(it.row()) + 1,
                    static_cast<long long>(it.col()) + 1, it.value().real(), it.value().imag());
      out << buf;
    }
}

}  // namespace kodaira
