#pragma once

// Local curvature data of a weight φ, the twist endomorphism Θ on (0,q)-forms,
// the asymptotic heat-kernel diagonal, and Morse-index integrals.

#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kodaira/errors.hpp"
#include "kodaira/exterior.hpp"
#include "kodaira/linalg.hpp"
#include "kodaira/numerics.hpp"
#include "kodaira/tolerances.hpp"

namespace kodaira {

/// Higher-order part of a weight. Any of the derivative callbacks may be left
/// empty, in which case finite differences of `value` are used.
struct AnalyticPerturbation {
  std::function<double(const CVector&)> value;
  std::function<CVector(const CVector&)> dbar_gradient;    // ∂/∂z̄_j
  std::function<CMatrix(const CVector&)> complex_hessian;  // ∂²/∂z_i∂z̄_j

  bool is_zero() const { return !value; }
};

/// φ(z) = Σ λ_j |z_j|² + perturbation(z), defined on the polydisc |z_j| < domain_radius.
class WeightFunction {
 public:
  WeightFunction(std::vector<double> lambda, AnalyticPerturbation perturbation = {},
                 double domain_radius = std::numeric_limits<double>::infinity())
      : lambda_(std::move(lambda)), pert_(std::move(perturbation)), domain_radius_(domain_radius) {
    if (lambda_.empty() || static_cast<int>(lambda_.size()) > max_complex_dimension)
      throw ArgumentError("weight: dimension out of range");
    for (double l : lambda_)
      if (!std::isfinite(l)) throw ArgumentError("weight: non-finite eigenvalue");
    if (!(domain_radius_ > 0.0)) throw ArgumentError("weight: domain radius must be positive");
  }

  int n() const { return static_cast<int>(lambda_.size()); }
  const std::vector<double>& lambda() const { return lambda_; }
  const AnalyticPerturbation& perturbation() const { return pert_; }
  double domain_radius() const { return domain_radius_; }

  bool in_domain(const CVector& z) const {
    if (z.size() != n()) return false;
    for (Eigen::Index j = 0; j < z.size(); ++j)
      if (!(std::abs(z(j)) < domain_radius_)) return false;
    return true;
  }

  double quadratic_value(const CVector& z) const {
    double s = 0.0;
    for (int j = 0; j < n(); ++j) s += lambda_[static_cast<std::size_t>(j)] * std::norm(z(j));
    return s;
  }

  double perturbation_value(const CVector& z) const { return pert_.is_zero() ? 0.0 : pert_.value(z); }

  double value(const CVector& z) const {
    require_domain(z);
    return quadratic_value(z) + perturbation_value(z);
  }

  /// ∂(perturbation)/∂z̄_j at z.
  CVector perturbation_dbar(const CVector& z) const {
    if (pert_.is_zero()) return CVector::Zero(n());
    if (pert_.dbar_gradient) return pert_.dbar_gradient(z);
    return fd::dbar_gradient(pert_.value, z);
  }

  /// Complex Hessian of the perturbation at z.
  CMatrix perturbation_hessian(const CVector& z) const {
    if (pert_.is_zero()) return CMatrix::Zero(n(), n());
    if (pert_.complex_hessian) return pert_.complex_hessian(z);
    return fd::complex_hessian_from_real(fd::real_hessian(pert_.value, z));
  }

  /// Finite-difference check that the perturbation vanishes to third order at 0.
  bool vanishes_to_third_order(double tol = 1e-6) const {
    if (pert_.is_zero()) return true;
    const CVector z0 = CVector::Zero(n());
    if (std::abs(pert_.value(z0)) > tol) return false;
    if (fd::dbar_gradient(pert_.value, z0, 1e-3).cwiseAbs().maxCoeff() > tol) return false;
    return fd::real_hessian(pert_.value, z0, 1e-3).cwiseAbs().maxCoeff() <= tol;
  }

  void require_domain(const CVector& z) const {
    if (z.size() != n()) throw ArgumentError("weight: point has wrong dimension");
    if (!in_domain(z)) throw DomainError("weight: point outside the analyticity domain");
  }

 private:
  std::vector<double> lambda_;
  AnalyticPerturbation pert_;
  double domain_radius_;
};

/// Hermitian n×n matrix of the curvature in an ω-orthonormal frame.
class CurvatureEndomorphism {
 public:
  explicit CurvatureEndomorphism(CMatrix m, double tol = defaults::hermitian_tolerance) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1 || m_.rows() > max_complex_dimension)
      throw ArgumentError("curvature: matrix must be square of size 1..20");
    if (!m_.allFinite()) throw DomainError("curvature: non-finite entries");
    if (hermitian_defect(m_) > tol) throw InvariantError("curvature: matrix is not Hermitian");
  }

  static CurvatureEndomorphism diagonal(const std::vector<double>& lambda) {
    CMatrix m = CMatrix::Zero(static_cast<Eigen::Index>(lambda.size()), static_cast<Eigen::Index>(lambda.size()));
    for (std::size_t j = 0; j < lambda.size(); ++j) m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = lambda[j];
    return CurvatureEndomorphism(std::move(m));
  }

  int n() const { return static_cast<int>(m_.rows()); }
  const CMatrix& matrix() const { return m_; }

  /// Ascending real eigenvalues.
  RVector eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(m_, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
  }

 private:
  CMatrix m_;
};

/// Endomorphism of Λ^{0,q}(C^n) in the lexicographic multi-index basis.
struct FiberEndomorphism {
  int n = 1;
  int q = 0;
  CMatrix matrix;

  FiberEndomorphism(int n_, int q_, CMatrix m) : n(n_), q(q_), matrix(std::move(m)) {
    const auto d = static_cast<Eigen::Index>(binomial(n, q));
    if (d == 0) throw ArgumentError("fiber endomorphism: q out of range");
    if (matrix.rows() != d || matrix.cols() != d) throw ArgumentError("fiber endomorphism: size must be binomial(n,q)");
  }

  static FiberEndomorphism zero(int n, int q) {
    const auto d = static_cast<Eigen::Index>(binomial(n, q));
    return {n, q, CMatrix::Zero(d, d)};
  }

  FormBasis basis() const { return FormBasis(n, q); }
  Eigen::Index dim() const { return matrix.rows(); }
};

inline CurvatureEndomorphism curvature_at(const WeightFunction& weight, const CVector& point) {
  weight.require_domain(point);
  CMatrix m = weight.perturbation_hessian(point);
  for (int j = 0; j < weight.n(); ++j) m(j, j) += weight.lambda()[static_cast<std::size_t>(j)];
  if (!m.allFinite()) throw DomainError("curvature_at: non-finite Hessian");
  return CurvatureEndomorphism(std::move(m), defaults::curvature_hermitian_tolerance);
}

/// Θ = -Σ_{ij} R(w_i, w̄_j) ω̄^i ∧ (ω̄^j)^*⌟ with R(w_i, w̄_j) = C_{ji}.
inline FiberEndomorphism theta_endomorphism(const CurvatureEndomorphism& curv, int q) {
  if (q < 0 || q > curv.n()) throw ArgumentError("theta_endomorphism: q out of range");
  const FormBasis basis(curv.n(), q);
  return {curv.n(), q, wedge_contract_matrix(-curv.matrix().transpose(), basis)};
}

/// λ/(2π(1-e^{-tλ})), with the series branch for |λ| below `threshold`.
inline double diagonal_factor(double lambda, double t, double threshold = defaults::degeneracy_threshold) {
  const double x = t * lambda;
  const double g = std::abs(lambda) < threshold ? x_over_one_minus_exp(x, std::numeric_limits<double>::infinity())
                                                : x / (-std::expm1(-x));
  return g / (2.0 * pi * t);
}

/// Product of diagonal_factor over the eigenvalues, in log space for large n.
inline double diagonal_prefactor(const RVector& lambda, double t, double threshold = defaults::degeneracy_threshold) {
  if (lambda.size() <= defaults::log_product_min_dimension) {
    double p = 1.0;
    for (Eigen::Index j = 0; j < lambda.size(); ++j) p *= diagonal_factor(lambda(j), t, threshold);
    return p;
  }
  double log_sum = 0.0;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) log_sum += std::log(diagonal_factor(lambda(j), t, threshold));
  return std::exp(log_sum);
}

/// det(Ṙ/2π) exp(tΘ) / det(1 - exp(-tṘ)).
inline FiberEndomorphism asymptotic_diagonal(const CurvatureEndomorphism& curv, int q, double t,
                                             double threshold = defaults::degeneracy_threshold) {
  if (!(t > 0.0)) throw ArgumentError("asymptotic_diagonal: t must be positive");
  const FiberEndomorphism theta = theta_endomorphism(curv, q);
  const double prefactor = diagonal_prefactor(curv.eigenvalues(), t, threshold);
  return {curv.n(), q, prefactor * exp_hermitian(theta.matrix, t)};
}

/// Number of negative eigenvalues, or nullopt if some |eigenvalue| ≤ tol.
inline std::optional<int> morse_index(const CurvatureEndomorphism& curv, double tol = defaults::degeneracy_threshold) {
  if (!(tol > 0.0)) throw ArgumentError("morse_index: tol must be positive");
  const RVector ev = curv.eigenvalues();
  int negative = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i)) <= tol) return std::nullopt;
    if (ev(i) < 0.0) ++negative;
  }
  return negative;
}

/// Samples of a curvature field on a parameter grid.
struct CurvatureField {
  int n = 1;
  std::vector<std::string> parameter_names;
  std::vector<std::vector<double>> parameters;  // one row per cell
  std::vector<double> volumes;
  std::vector<CurvatureEndomorphism> curvatures;

  std::size_t size() const { return curvatures.size(); }

  void add(std::vector<double> params, double volume, CurvatureEndomorphism curv) {
    if (!(volume > 0.0)) throw ArgumentError("curvature field: cell volume must be positive");
    if (curv.n() != n) throw ArgumentError("curvature field: dimension mismatch");
    parameters.push_back(std::move(params));
    volumes.push_back(volume);
    curvatures.push_back(std::move(curv));
  }
};

struct MorseBound {
  double value = 0.0;
  double degenerate_volume = 0.0;
  std::size_t cells_used = 0;
};

/// (-1)^q Σ_{cells with index ≤ q} det(Ṙ/2π) · volume, skipping degenerate cells.
/// With `exact_index` only cells of index exactly q contribute.
inline MorseBound morse_bound(const CurvatureField& field, int q, double tol = defaults::degeneracy_threshold,
                              bool exact_index = false) {
  if (field.size() == 0) throw ArgumentError("morse_bound: empty grid");
  if (q < 0 || q > field.n) throw ArgumentError("morse_bound: q out of range");
  MorseBound out;
  for (std::size_t c = 0; c < field.size(); ++c) {
    const auto& curv = field.curvatures[c];
    const auto idx = morse_index(curv, tol);
    if (!idx) {
      out.degenerate_volume += field.volumes[c];
      continue;
    }
    if (exact_index ? *idx != q : *idx > q) continue;
    const RVector ev = curv.eigenvalues();
    double det = 1.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) det *= ev(i) / (2.0 * pi);
    out.value += det * field.volumes[c];
    ++out.cells_used;
  }
  if (q % 2) out.value = -out.value;
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw ArgumentError("curvature CSV line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

inline std::string entry_name(const char* part, int i, int j, int n, bool underscored) {
  std::string s = part;
  s += '_';
  s += std::to_string(i + 1);
  if (underscored || n > 9) s += '_';
  s += std::to_string(j + 1);
  return s;
}

}  // namespace detail

/// Reads `u1..um,vol,re_11,im_11,re_12,...`; the header is mandatory.
inline CurvatureField read_curvature_field_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ArgumentError("curvature CSV: missing header");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  std::size_t vol_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == "vol") vol_col = c;
  if (vol_col == header.size()) throw ArgumentError("curvature CSV: no 'vol' column");
  for (std::size_t c = 0; c < vol_col; ++c)
    if (header[c] != "u" + std::to_string(c + 1))
      throw ArgumentError("curvature CSV: expected parameter column u" + std::to_string(c + 1) + ", got '" + header[c] + "'");
  const std::size_t entries = header.size() - vol_col - 1;
  int n = 0;
  while (static_cast<std::size_t>(2 * (n + 1) * (n + 1)) <= entries) ++n;
  if (n < 1 || static_cast<std::size_t>(2 * n * n) != entries)
    throw ArgumentError("curvature CSV: entry columns must be 2n^2 re/im pairs");
  for (int underscored = 0; underscored < 2; ++underscored) {
    bool ok = true;
    std::size_t c = vol_col + 1;
    for (int i = 0; i < n && ok; ++i)
      for (int j = 0; j < n && ok; ++j) {
        ok = header[c++] == detail::entry_name("re", i, j, n, underscored) &&
             header[c++] == detail::entry_name("im", i, j, n, underscored);
      }
    if (ok) break;
    if (underscored) throw ArgumentError("curvature CSV: entry columns must be re_ij,im_ij in row-major order");
  }

  CurvatureField field;
  field.n = n;
  field.parameter_names.assign(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(vol_col));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ArgumentError("curvature CSV line " + std::to_string(line_no) + ": wrong number of columns");
    std::vector<double> params;
    for (std::size_t c = 0; c < vol_col; ++c) params.push_back(detail::parse_double(cells[c], line_no));
    const double vol = detail::parse_double(cells[vol_col], line_no);
    CMatrix m(n, n);
    std::size_t c = vol_col + 1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double re = detail::parse_double(cells[c++], line_no);
        const double im = detail::parse_double(cells[c++], line_no);
        m(i, j) = Complex(re, im);
      }
    try {
      field.add(std::move(params), vol, CurvatureEndomorphism(std::move(m), defaults::curvature_hermitian_tolerance));
    } catch (const std::exception& e) {
      throw ArgumentError("curvature CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (field.size() == 0) throw ArgumentError("curvature CSV: no data rows");
  return field;
}

inline void write_curvature_field_csv(std::ostream& out, const CurvatureField& field) {
  const std::size_t m = field.parameters.empty() ? 0 : field.parameters.front().size();
  for (std::size_t c = 0; c < m; ++c) out << 'u' << c + 1 << ',';
  out << "vol";
  for (int i = 0; i < field.n; ++i)
    for (int j = 0; j < field.n; ++j)
      out << ',' << detail::entry_name("re", i, j, field.n, false) << ',' << detail::entry_name("im", i, j, field.n, false);
  out << '\n';
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (std::size_t r = 0; r < field.size(); ++r) {
    for (double p : field.parameters[r]) {
      put(p);
      out << ',';
    }
    put(field.volumes[r]);
    const CMatrix& M = field.curvatures[r].matrix();
    for (int i = 0; i < field.n; ++i)
      for (int j = 0; j < field.n; ++j) {
        out << ',';
        put(M(i, j).real());
        out << ',';
        put(M(i, j).imag());
      }
    out << '\n';
  }
}

}  // namespace kodaira
