#pragma once

// Linear-algebra layer: complex dense/sparse types, Hermitian checks,
// Lanczos e^{-tA}v with a posteriori error control, and shift-invert
// subspace iteration for eigenvalues near a target.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "kodaira/errors.hpp"
#include "kodaira/tolerances.hpp"

namespace kodaira {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<Complex, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<Complex, int>;

inline constexpr double pi = 3.14159265358979323846;

inline double max_abs(const CMatrix& A) { return A.size() ? A.cwiseAbs().maxCoeff() : 0.0; }

inline double max_abs(const SparseMatrix& A) {
  double m = 0.0;
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

/// max |A - A^*| entrywise.
inline double hermitian_defect(const CMatrix& A) {
  return A.rows() ? (A - A.adjoint()).cwiseAbs().maxCoeff() : 0.0;
}

inline double hermitian_defect(const SparseMatrix& A) {
  const SparseMatrix D = A - SparseMatrix(A.adjoint());
  return max_abs(D);
}

/// Eigendecomposition of a Hermitian matrix; only the lower triangle is read.
struct HermitianEigen {
  RVector values;   // ascending
  CMatrix vectors;  // columns

  explicit HermitianEigen(const CMatrix& A) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(A);
    if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver failed", 0.0);
    values = es.eigenvalues();
    vectors = es.eigenvectors();
  }

  /// V f(Λ) V^*
  template <class F>
  CMatrix apply(F&& f) const {
    CVector fv(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) fv(i) = f(values(i));
    return vectors * fv.asDiagonal() * vectors.adjoint();
  }
};

/// exp(s A) for Hermitian A.
inline CMatrix exp_hermitian(const CMatrix& A, double s) {
  return HermitianEigen(A).apply([s](double x) { return Complex(std::exp(s * x), 0.0); });
}

struct KrylovOptions {
  int subspace = defaults::krylov_subspace;
  double tolerance = defaults::krylov_tolerance;
  int max_steps = defaults::krylov_max_steps;
};

struct KrylovStats {
  int substeps = 0;
  int matvecs = 0;
  double error_estimate = 0.0;
};

/// Lanczos basis of K_m(A, v) with full reorthogonalization.
struct LanczosBasis {
  CMatrix V;            // n × m orthonormal columns
  RVector alpha;        // diagonal of T
  RVector beta;         // subdiagonal of T (size m-1)
  double next_beta = 0; // β_m, coupling to the first discarded vector
  bool exact = false;   // invariant subspace reached
};

template <class Mat>
LanczosBasis lanczos(const Mat& A, const CVector& v, int m_max, KrylovStats* stats = nullptr) {
  const Eigen::Index n = v.size();
  const int m_cap = static_cast<int>(std::min<Eigen::Index>(m_max, n));
  LanczosBasis L;
  L.V.resize(n, m_cap);
  std::vector<double> a, b;
  L.V.col(0) = v / v.norm();
  int m = 0;
  for (int j = 0; j < m_cap; ++j) {
    CVector w = A * L.V.col(j);
    if (stats) ++stats->matvecs;
    const double aj = L.V.col(j).dot(w).real();
    a.push_back(aj);
    w -= aj * L.V.col(j);
    if (j > 0) w -= b.back() * L.V.col(j - 1);
    // two passes of classical Gram-Schmidt against the whole basis
    for (int pass = 0; pass < 2; ++pass) {
      const CVector coeff = L.V.leftCols(j + 1).adjoint() * w;
      w -= L.V.leftCols(j + 1) * coeff;
    }
    const double bj = w.norm();
    m = j + 1;
    const double scale = std::abs(aj) + (b.empty() ? 0.0 : b.back()) + 1e-300;
    if (bj <= 1e-13 * scale) {
      L.exact = true;
      L.next_beta = 0.0;
      break;
    }
    if (j + 1 == m_cap) {
      L.next_beta = bj;
      if (m_cap == n) L.exact = true;
      break;
    }
    b.push_back(bj);
    L.V.col(j + 1) = w / bj;
  }
  L.V.conservativeResize(n, m);
  L.alpha = Eigen::Map<RVector>(a.data(), m);
  L.beta = RVector(std::max(0, m - 1));
  for (int i = 0; i + 1 < m; ++i) L.beta(i) = b[static_cast<std::size_t>(i)];
  return L;
}

/// e^{-tA} v for Hermitian positive-semidefinite-ish A by restarted Lanczos.
/// Substeps are accepted when the local error estimate is below
/// tolerance · ‖v‖ · (substep / t).
template <class Mat>
CVector lanczos_expv(const Mat& A, const CVector& v, double t, const KrylovOptions& opt = {},
                     KrylovStats* stats = nullptr) {
  if (!(t >= 0.0)) throw ArgumentError("lanczos_expv: t must be nonnegative");
  CVector w = v;
  const double v_norm = v.norm();
  if (v_norm == 0.0 || t == 0.0) return w;
  double remaining = t;
  double tau = t;
  int steps = 0;
  double total_err = 0.0;
  while (remaining > 0.0) {
    if (++steps > opt.max_steps) throw NumericalError("Krylov expv: step limit reached", total_err / v_norm);
    const double beta0 = w.norm();
    if (beta0 == 0.0) break;
    const LanczosBasis L = lanczos(A, w, opt.subspace, stats);
    const auto m = L.alpha.size();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(L.alpha, L.beta, Eigen::ComputeEigenvectors);
    const Eigen::MatrixXd& Q = es.eigenvectors();
    const RVector& theta = es.eigenvalues();
    tau = std::min(tau, remaining);
    RVector y;
    double err = 0.0;
    for (int attempt = 0;; ++attempt) {
      RVector e(m);
      for (Eigen::Index i = 0; i < m; ++i) e(i) = std::exp(-tau * theta(i)) * Q(0, i);
      y = Q * e;
      err = L.exact ? 0.0 : beta0 * L.next_beta * std::abs(y(m - 1));
      const double allowed = opt.tolerance * v_norm * (tau / t);
      if (err <= allowed) break;
      if (attempt > 200) throw NumericalError("Krylov expv: cannot meet tolerance", err / v_norm);
      const double shrink = 0.9 * std::pow(allowed / err, 1.0 / static_cast<double>(std::max<Eigen::Index>(m, 2)));
      tau *= std::clamp(shrink, 0.1, 0.5);
    }
    w = beta0 * (L.V * y.cast<Complex>());
    total_err += err;
    remaining -= tau;
    if (remaining < 1e-15 * t) remaining = 0.0;
    tau *= 2.0;
    if (stats) ++stats->substeps;
  }
  if (stats) stats->error_estimate = total_err / v_norm;
  return w;
}

/// Eigenpairs of a sparse Hermitian matrix nearest to a shift, by block
/// shift-invert subspace iteration with Rayleigh-Ritz extraction.
struct NearestEigenpairs {
  RVector values;    // sorted by distance to the shift
  CMatrix vectors;
  double max_residual = 0.0;
  int iterations = 0;
};

inline NearestEigenpairs nearest_eigenpairs(const SparseMatrix& A, double shift, int count, int block = 0,
                                            double tol = 1e-9, int max_iter = 500, std::uint64_t seed = 12345) {
  const Eigen::Index n = A.rows();
  if (count < 1 || count > n) throw ArgumentError("nearest_eigenpairs: bad count");
  if (block <= 0) block = std::min<int>(static_cast<int>(n), std::max(count + 6, (3 * count) / 2 + 2));
  block = std::min<int>(block, static_cast<int>(n));
  SparseMatrix S = A;
  for (Eigen::Index i = 0; i < n; ++i) S.coeffRef(i, i) -= shift;
  S.makeCompressed();
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(S);
  if (lu.info() != Eigen::Success) throw NumericalError("nearest_eigenpairs: factorization failed (shift on spectrum?)", 0.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  CMatrix X(n, block);
  for (Eigen::Index j = 0; j < block; ++j)
    for (Eigen::Index i = 0; i < n; ++i) X(i, j) = Complex(g(rng), g(rng));

  auto orthonormalize = [](CMatrix& M) {
    Eigen::HouseholderQR<CMatrix> qr(M);
    M = qr.householderQ() * CMatrix::Identity(M.rows(), M.cols());
  };
  orthonormalize(X);

  NearestEigenpairs out;
  for (int it = 1; it <= max_iter; ++it) {
    CMatrix Y = lu.solve(X);
    orthonormalize(Y);
    const CMatrix AY = A * Y;
    CMatrix H = Y.adjoint() * AY;
    H = 0.5 * (H + H.adjoint()).eval();
    HermitianEigen small(H);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(block));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return std::abs(small.values(a) - shift) < std::abs(small.values(b) - shift);
    });
    CMatrix Q(block, block);
    RVector th(block);
    for (int j = 0; j < block; ++j) {
      Q.col(j) = small.vectors.col(order[static_cast<std::size_t>(j)]);
      th(j) = small.values(order[static_cast<std::size_t>(j)]);
    }
    X = Y * Q;
    const CMatrix R = AY * Q - X * th.asDiagonal();
    double res = 0.0;
    for (int j = 0; j < count; ++j) res = std::max(res, R.col(j).norm() / std::max(1.0, std::abs(th(j))));
    out.values = th.head(count);
    out.vectors = X.leftCols(count);
    out.max_residual = res;
    out.iterations = it;
    if (res <= tol) return out;
  }
  throw NumericalError("nearest_eigenpairs: no convergence", out.max_residual);
}

/// Factorization of A - shift·I for repeated solves. Uses LDLᴴ with AMD
/// ordering, falling back to partial-pivoting LU if a pivot vanishes.
class ShiftedFactorization {
 public:
  ShiftedFactorization(const SparseMatrix& A, double shift) : shift_(shift) {
    SparseMatrix S = A;
    for (Eigen::Index i = 0; i < S.rows(); ++i) S.coeffRef(i, i) -= shift;
    S.makeCompressed();
    ldlt_.compute(S);
    if (ldlt_.info() == Eigen::Success) {
      const auto& d = ldlt_.vectorD();
      bool finite = true;
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d(i).real()) || d(i).real() == 0.0) finite = false;
        if (d(i).real() < 0.0) ++negative_;
      }
      if (finite) return;
    }
    negative_ = -1;
    lu_ = std::make_unique<Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>>();
    lu_->compute(S);
    if (lu_->info() != Eigen::Success) throw NumericalError("shifted factorization: matrix is singular at the shift", 0.0);
  }

  double shift() const { return shift_; }
  CVector solve(const CVector& x) const { return lu_ ? CVector(lu_->solve(x)) : CVector(ldlt_.solve(x)); }
  CVector operator*(const CVector& x) const { return solve(x); }

  /// Eigenvalues of A below the shift (Sylvester inertia); empty when the LU
  /// fallback was needed.
  std::optional<Eigen::Index> eigenvalues_below() const {
    if (negative_ < 0) return std::nullopt;
    return negative_;
  }

 private:
  double shift_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  std::unique_ptr<Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>> lu_;
  Eigen::Index negative_ = 0;
};

/// Distinct eigenvalues nearest to a shift by Lanczos on (A - shift)^{-1}.
/// Multiplicities are not resolved; use nearest_eigenpairs when they matter.
struct NearestEigenvalues {
  RVector values;          // sorted by distance to the shift
  double max_residual = 0; // bound on ‖Ax - λx‖ for the returned Ritz pairs
  int steps = 0;
};

inline NearestEigenvalues nearest_eigenvalues(const ShiftedFactorization& inv, Eigen::Index n, int count,
                                              double tol = 1e-9, int max_steps = 300, std::uint64_t seed = 12345) {
  if (count < 1 || count > n) throw ArgumentError("nearest_eigenvalues: bad count");
  const double shift = inv.shift();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = Complex(g(rng), g(rng));

  NearestEigenvalues out;
  const int cap = static_cast<int>(std::min<Eigen::Index>(max_steps, n));
  for (int m = std::min(cap, std::max(2 * count + 10, 30));; m = std::min(cap, 2 * m)) {
    const LanczosBasis L = lanczos(inv, v, m);
    const auto k = L.alpha.size();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(L.alpha, L.beta, Eigen::ComputeEigenvectors);
    // largest |θ| of the inverse are nearest to the shift
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return std::abs(es.eigenvalues()(a)) > std::abs(es.eigenvalues()(b));
    });
    const int found = static_cast<int>(std::min<Eigen::Index>(count, k));
    out.values.resize(found);
    out.max_residual = 0.0;
    for (int j = 0; j < found; ++j) {
      const Eigen::Index i = order[static_cast<std::size_t>(j)];
      const double theta = es.eigenvalues()(i);
      out.values(j) = shift + 1.0 / theta;
      const double r = L.exact ? 0.0 : L.next_beta * std::abs(es.eigenvectors()(k - 1, i));
      out.max_residual = std::max(out.max_residual, r / (theta * theta) / std::max(1.0, std::abs(out.values(j))));
    }
    out.steps = static_cast<int>(k);
    if (out.max_residual <= tol || L.exact) return out;
    if (m == cap) throw NumericalError("nearest_eigenvalues: no convergence", out.max_residual);
  }
}

inline NearestEigenvalues nearest_eigenvalues(const SparseMatrix& A, double shift, int count, double tol = 1e-9,
                                              int max_steps = 300, std::uint64_t seed = 12345) {
  const ShiftedFactorization inv(A, shift);
  return nearest_eigenvalues(inv, A.rows(), count, tol, max_steps, seed);
}

}  // namespace kodaira
