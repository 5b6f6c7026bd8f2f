#pragma once

// e^{-tA} for assembled operators: vector actions, kernel diagonals at a grid
// site, traces, the sharp bound s^N e^{-ts} ≤ (N/(et))^N on the spectrum, and
// the k-convergence experiment for scaled operators.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "kodaira/discrete_operator.hpp"
#include "kodaira/errors.hpp"
#include "kodaira/geometry.hpp"
#include "kodaira/linalg.hpp"
#include "kodaira/model_kernel.hpp"
#include "kodaira/tolerances.hpp"

namespace kodaira {

struct DenseEigen {
  std::size_t dimension_cap = defaults::dense_dimension_cap;
};

struct Krylov {
  int subspace = defaults::krylov_subspace;
  double tolerance = defaults::krylov_tolerance;
  int max_steps = defaults::krylov_max_steps;
};

struct CrankNicolson {
  double time_step = 1e-3;
};

using SemigroupMethod = std::variant<DenseEigen, Krylov, CrankNicolson>;

inline std::string method_name(const SemigroupMethod& m) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DenseEigen>) return "dense-eigen";
        else if constexpr (std::is_same_v<T, Krylov>) return "krylov";
        else return "crank-nicolson";
      },
      m);
}

/// Applies e^{-tA} repeatedly to one matrix, caching the eigendecomposition
/// (dense) or the factorization (Crank–Nicolson) between calls.
class HeatPropagator {
 public:
  HeatPropagator(const SparseMatrix& A, SemigroupMethod method) : A_(A), method_(method) {
    if (A.rows() != A.cols()) throw ArgumentError("heat: operator must be square");
    if (const auto* d = std::get_if<DenseEigen>(&method_)) {
      if (static_cast<std::size_t>(A.rows()) > d->dimension_cap)
        throw ResourceError("heat: dimension " + std::to_string(A.rows()) + " exceeds the dense cap " +
                            std::to_string(d->dimension_cap));
    }
    if (const auto* c = std::get_if<CrankNicolson>(&method_))
      if (!(c->time_step > 0.0)) throw ArgumentError("heat: Crank-Nicolson time step must be positive");
    if (const auto* k = std::get_if<Krylov>(&method_))
      if (k->subspace < 2 || !(k->tolerance > 0.0)) throw ArgumentError("heat: bad Krylov parameters");
  }

  const SemigroupMethod& method() const { return method_; }
  Eigen::Index dim() const { return A_.rows(); }
  const KrylovStats& last_krylov_stats() const { return stats_; }

  CVector apply(const CVector& v, double t) {
    if (v.size() != A_.rows()) throw ArgumentError("heat: vector has wrong dimension");
    if (!(t >= 0.0)) throw ArgumentError("heat: t must be nonnegative");
    if (t == 0.0) return v;
    return std::visit([&](const auto& m) { return apply_with(m, v, t); }, method_);
  }

  /// Ascending spectrum (dense method only).
  const RVector& eigenvalues() {
    ensure_eigen();
    return eig_->values;
  }

  /// Entry (i, j) of e^{-tA} without forming the matrix (dense method only).
  Complex entry(Eigen::Index i, Eigen::Index j, double t) {
    ensure_eigen();
    Complex s = 0.0;
    for (Eigen::Index m = 0; m < eig_->values.size(); ++m)
      s += eig_->vectors(i, m) * std::exp(-t * eig_->values(m)) * std::conj(eig_->vectors(j, m));
    return s;
  }

  bool is_dense() const { return std::holds_alternative<DenseEigen>(method_); }

 private:
  void ensure_eigen() {
    if (!is_dense()) throw ArgumentError("heat: eigen data requires the dense method");
    if (!eig_) eig_ = std::make_unique<HermitianEigen>(CMatrix(A_));
  }

  CVector apply_with(const DenseEigen&, const CVector& v, double t) {
    ensure_eigen();
    CVector c = eig_->vectors.adjoint() * v;
    for (Eigen::Index m = 0; m < c.size(); ++m) c(m) *= std::exp(-t * eig_->values(m));
    return eig_->vectors * c;
  }

  CVector apply_with(const Krylov& k, const CVector& v, double t) {
    stats_ = {};
    return lanczos_expv(A_, v, t, KrylovOptions{k.subspace, k.tolerance, k.max_steps}, &stats_);
  }

  CVector apply_with(const CrankNicolson& c, const CVector& v, double t) {
    const auto steps = static_cast<long long>(std::ceil(t / c.time_step - 1e-12));
    const double dt = t / static_cast<double>(steps);
    if (!cn_ || std::abs(cn_dt_ - dt) > 1e-15 * dt) {
      SparseMatrix I(A_.rows(), A_.cols());
      I.setIdentity();
      cn_plus_ = I + (0.5 * dt) * A_;
      cn_minus_ = I - (0.5 * dt) * A_;
      cn_plus_.makeCompressed();
      cn_ = std::make_unique<Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>>();
      cn_->compute(cn_plus_);
      if (cn_->info() != Eigen::Success) throw NumericalError("heat: Crank-Nicolson factorization failed", 0.0);
      cn_dt_ = dt;
    }
    CVector x = v;
    for (long long s = 0; s < steps; ++s) {
      const CVector rhs = cn_minus_ * x;
      x = cn_->solve(rhs);
    }
    return x;
  }

  SparseMatrix A_;
  SemigroupMethod method_;
  std::unique_ptr<HermitianEigen> eig_;
  std::unique_ptr<Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>> cn_;
  SparseMatrix cn_plus_, cn_minus_;
  double cn_dt_ = 0.0;
  KrylovStats stats_;
};

inline CVector heat_apply(const DiscreteOperator& op, const CVector& v, double t, const SemigroupMethod& method) {
  if (!(t > 0.0)) throw ArgumentError("heat_apply: t must be positive");
  HeatPropagator p(op.matrix, method);
  return p.apply(v, t);
}

inline CVector heat_apply(const SparseMatrix& A, const CVector& v, double t, const SemigroupMethod& method) {
  if (!(t > 0.0)) throw ArgumentError("heat_apply: t must be positive");
  HeatPropagator p(A, method);
  return p.apply(v, t);
}

/// Kernel diagonal block at a grid site: e^{-tA} applied to the discrete delta
/// (unit vector over the cell volume) for each form, read back at the site.
inline FiberEndomorphism kernel_diagonal(const DiscreteOperator& op, HeatPropagator& prop, std::size_t site, double t,
                                         Measure measure = Measure::hermitian) {
  if (site >= op.grid.sites()) throw ArgumentError("kernel_diagonal: site outside the grid");
  if (!(t > 0.0)) throw ArgumentError("kernel_diagonal: t must be positive");
  const auto d = static_cast<Eigen::Index>(op.fiber_dim());
  const double cell = op.grid.cell_volume(measure);
  CMatrix K(d, d);
  for (Eigen::Index f = 0; f < d; ++f) {
    if (prop.is_dense()) {
      for (Eigen::Index g = 0; g < d; ++g)
        K(g, f) = prop.entry(op.index(site, static_cast<std::size_t>(g)), op.index(site, static_cast<std::size_t>(f)), t) / cell;
      continue;
    }
    CVector delta = CVector::Zero(op.dim());
    delta(op.index(site, static_cast<std::size_t>(f))) = 1.0 / cell;
    const CVector col = prop.apply(delta, t);
    for (Eigen::Index g = 0; g < d; ++g) K(g, f) = col(op.index(site, static_cast<std::size_t>(g)));
  }
  return {op.n, op.q, std::move(K)};
}

inline FiberEndomorphism kernel_diagonal(const DiscreteOperator& op, std::size_t site, double t,
                                         const SemigroupMethod& method, Measure measure = Measure::hermitian) {
  HeatPropagator p(op.matrix, method);
  return kernel_diagonal(op, p, site, t, measure);
}

struct TraceEstimate {
  double value = 0.0;
  double standard_error = 0.0;  // zero for the exact dense sum
  int probes = 0;
};

/// Tr e^{-tA}: exact for the dense method, otherwise a Rademacher estimate
/// using ‖e^{-tA/2} v‖² per probe.
inline TraceEstimate heat_trace(const SparseMatrix& A, double t, const SemigroupMethod& method, std::uint64_t seed,
                                int probes = defaults::trace_probes) {
  if (!(t > 0.0)) throw ArgumentError("heat_trace: t must be positive");
  HeatPropagator p(A, method);
  TraceEstimate out;
  if (p.is_dense()) {
    const Eigen::SelfAdjointEigenSolver<CMatrix> eig(CMatrix(A), Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("heat_trace: eigensolver failed", 0.0);
    const RVector& ev = eig.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) out.value += std::exp(-t * ev(i));
    return out;
  }
  if (probes < 2) throw ArgumentError("heat_trace: at least two probes are required");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(probes));
  for (int i = 0; i < probes; ++i) {
    CVector v(A.rows());
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = coin(rng) ? 1.0 : -1.0;
    samples.push_back(p.apply(v, 0.5 * t).squaredNorm());
  }
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= probes;
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= (probes - 1);
  out.value = mean;
  out.standard_error = std::sqrt(var / probes);
  out.probes = probes;
  return out;
}

inline TraceEstimate heat_trace(const DiscreteOperator& op, double t, const SemigroupMethod& method, std::uint64_t seed,
                                int probes = defaults::trace_probes) {
  return heat_trace(op.matrix, t, method, seed, probes);
}

struct SpectralBoundResult {
  bool passed = false;
  double max_value = 0.0;      // max over the spectrum of s^N e^{-ts}
  double bound = 0.0;          // (N/(e t))^N
  double attained_at = 0.0;    // eigenvalue attaining max_value
  double min_eigenvalue = 0.0;
  bool dense = true;
};

inline double power_exp(double s, double t, int N) {
  return (N == 0 ? 1.0 : std::pow(s, N)) * std::exp(-t * s);
}

struct SpectralBoundQuery {
  double t = 1.0;
  int power = 0;
};

/// Checks max_s s^N e^{-ts} ≤ (N/(et))^N over the spectrum for each query.
/// Small operators are diagonalized. Larger ones get positivity from the
/// inertia of A + εI, and the maximum from the eigenvalues bracketing the
/// maximizer N/t, found by shift-invert Lanczos with one factorization per
/// distinct N/t.
inline std::vector<SpectralBoundResult> spectral_bound_checks(const SparseMatrix& A,
                                                              const std::vector<SpectralBoundQuery>& queries,
                                                              std::size_t dense_limit = 2000) {
  for (const auto& q : queries) {
    if (q.power < 0 || q.power > 4) throw ArgumentError("spectral_bound_check: N must be in 0..4");
    if (!(q.t > 0.0)) throw ArgumentError("spectral_bound_check: t must be positive");
  }
  const double scale = std::max(1.0, max_abs(A));
  const double eps = 1e-10 * scale;
  const bool dense = static_cast<std::size_t>(A.rows()) <= dense_limit;

  std::vector<double> spectrum;  // full spectrum (dense) or the lowest eigenvalue (sparse)
  double min_eigenvalue = 0.0;
  bool psd = false;
  if (dense) {
    const Eigen::SelfAdjointEigenSolver<CMatrix> eig(CMatrix(A), Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("spectral_bound_check: eigensolver failed", 0.0);
    const RVector& ev = eig.eigenvalues();
    spectrum.assign(ev.data(), ev.data() + ev.size());
    min_eigenvalue = ev.minCoeff();
    psd = min_eigenvalue >= -eps;
  } else {
    const ShiftedFactorization low(A, -eps);
    const auto below = low.eigenvalues_below();
    psd = below && *below == 0;
    if (psd) {
      min_eigenvalue = nearest_eigenvalues(low, A.rows(), 1, 1e-8).values(0);
    } else {
      // Gershgorin lower bound: the nearest eigenvalue to it is the lowest
      double g = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < A.outerSize(); ++c) {
        double diag = 0.0, off = 0.0;
        for (SparseMatrix::InnerIterator it(A, c); it; ++it) {
          if (it.row() == c)
            diag = it.value().real();
          else
            off += std::abs(it.value());
        }
        g = std::min(g, diag - off);
      }
      min_eigenvalue = nearest_eigenvalues(A, g - 1.0, 1, 1e-8).values(0);
    }
    spectrum.push_back(min_eigenvalue);
  }

  std::map<double, std::vector<double>> bracket;  // N/t -> eigenvalues around it
  if (!dense)
    for (const auto& q : queries) {
      const double star = q.power / q.t;
      if (q.power == 0 || bracket.count(star)) continue;
      std::optional<ShiftedFactorization> f;
      for (int attempt = 0; !f; ++attempt) {
        try {
          f.emplace(A, star + (attempt == 0 ? 0.0 : 1e-7 * attempt * scale));
        } catch (const NumericalError&) {
          if (attempt == 3) throw;
        }
      }
      const auto n_below = f->eigenvalues_below();
      const Eigen::Index n_above = n_below ? A.rows() - *n_below : A.rows();
      std::vector<double> vals;
      for (int count = 6;; count *= 2) {
        const auto near = nearest_eigenvalues(*f, A.rows(), std::min<int>(count, static_cast<int>(A.rows())), 1e-10);
        vals.assign(near.values.data(), near.values.data() + near.values.size());
        const bool has_below = std::any_of(vals.begin(), vals.end(), [&](double v) { return v <= f->shift(); });
        const bool has_above = std::any_of(vals.begin(), vals.end(), [&](double v) { return v >= f->shift(); });
        if ((has_below || (n_below && *n_below == 0)) && (has_above || n_above == 0)) break;
        if (count >= 48 || count >= A.rows()) break;
      }
      bracket[star] = std::move(vals);
    }

  std::vector<SpectralBoundResult> out;
  for (const auto& q : queries) {
    SpectralBoundResult r;
    r.dense = dense;
    r.bound = q.power == 0 ? 1.0 : std::pow(q.power / (std::exp(1.0) * q.t), q.power);
    r.min_eigenvalue = min_eigenvalue;
    std::vector<double> candidates = spectrum;
    if (!dense && q.power > 0) {
      const auto& b = bracket.at(q.power / q.t);
      candidates.insert(candidates.end(), b.begin(), b.end());
    }
    for (double s : candidates) {
      const double v = power_exp(s, q.t, q.power);
      if (v > r.max_value) {
        r.max_value = v;
        r.attained_at = s;
      }
    }
    r.passed = psd && r.max_value <= r.bound * (1.0 + 1e-12) + 1e-300;
    out.push_back(r);
  }
  return out;
}

inline SpectralBoundResult spectral_bound_check(const SparseMatrix& A, double t, int N, std::size_t dense_limit = 2000) {
  return spectral_bound_checks(A, {{t, N}}, dense_limit).front();
}

inline std::vector<SpectralBoundResult> spectral_bound_checks(const DiscreteOperator& op,
                                                              const std::vector<SpectralBoundQuery>& queries,
                                                              std::size_t dense_limit = 2000) {
  return spectral_bound_checks(op.matrix, queries, dense_limit);
}

inline SpectralBoundResult spectral_bound_check(const DiscreteOperator& op, double t, int N,
                                                std::size_t dense_limit = 2000) {
  return spectral_bound_check(op.matrix, t, N, dense_limit);
}

/// Fixed scaled-coordinate grid used for every k.
struct GridPolicy {
  double radius = 6.0;
  double spacing = 0.1;
  std::size_t site_cap = defaults::grid_site_cap;
};

struct ConvergenceRow {
  int k = 0;
  double t = 0.0;
  int q = 0;
  std::string row_J;
  std::string col_J;
  Complex value;
  Complex model;
  double abs_err = 0.0;
  double abs_err_sqrtk = 0.0;
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;

  /// Largest entrywise error for one (k, t) cell.
  double max_error(int k, double t) const {
    double e = -1.0;
    for (const auto& r : rows)
      if (r.k == k && r.t == t) e = std::max(e, r.abs_err);
    if (e < 0.0) throw ArgumentError("convergence report: no such (k, t)");
    return e;
  }

  /// Largest |value| (entrywise) for one (k, t) cell.
  double max_value(int k, double t) const {
    double v = 0.0;
    for (const auto& r : rows)
      if (r.k == k && r.t == t) v = std::max(v, std::abs(r.value));
    return v;
  }

  std::vector<int> ks() const {
    std::vector<int> out;
    for (const auto& r : rows)
      if (out.empty() || out.back() != r.k) out.push_back(r.k);
    return out;
  }
};

inline void write_convergence_csv(std::ostream& out, const ConvergenceReport& report) {
  out << "k,t,q,row_J,col_J,re_value,im_value,re_model,im_model,abs_err,abs_err_sqrtk\n";
  char buf[512];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%d,%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.k, r.t, r.q,
                  r.row_J.c_str(), r.col_J.c_str(), r.value.real(), r.value.imag(), r.model.real(), r.model.imag(),
                  r.abs_err, r.abs_err_sqrtk);
    out << buf;
  }
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers; the first
/// exception is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, 64));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Kernel diagonal of the scaled operator at the origin for each k and t,
/// against the model diagonal of the weight's quadratic part.
inline ConvergenceReport converge_in_k(const WeightFunction& weight, const PerturbationSpec& pert, int q,
                                       const std::vector<double>& t_list, const std::vector<int>& k_list,
                                       const GridPolicy& policy = {}, const SemigroupMethod& method = Krylov{},
                                       int threads = 1, std::vector<DiscreteOperator>* operators = nullptr) {
  if (t_list.empty() || k_list.empty()) throw ArgumentError("converge_in_k: empty t or k list");
  for (std::size_t i = 1; i < k_list.size(); ++i)
    if (k_list[i] <= k_list[i - 1]) throw ArgumentError("converge_in_k: k list must be strictly increasing");
  for (double t : t_list)
    if (!(t > 0.0)) throw ArgumentError("converge_in_k: times must be positive");
  const GridSpec grid(weight.n(), policy.radius, policy.spacing, policy.site_cap);
  const ModelSpec spec(weight.n(), weight.lambda(), q);
  const FormBasis basis(weight.n(), q);

  std::vector<std::vector<ConvergenceRow>> cells(k_list.size());
  std::vector<std::optional<DiscreteOperator>> ops(k_list.size());
  parallel_for(k_list.size(), threads, [&](std::size_t c) {
    const int k = k_list[c];
    DiscreteOperator op = assemble_scaled(weight, pert, k, grid, q);
    HeatPropagator prop(op.matrix, method);
    for (double t : t_list) {
      const auto value = kernel_diagonal(op, prop, grid.origin(), t);
      const auto model = model_diagonal(spec, t);
      for (Eigen::Index i = 0; i < value.dim(); ++i)
        for (Eigen::Index j = 0; j < value.dim(); ++j) {
          ConvergenceRow r;
          r.k = k;
          r.t = t;
          r.q = q;
          r.row_J = basis.label(static_cast<std::size_t>(i));
          r.col_J = basis.label(static_cast<std::size_t>(j));
          r.value = value.matrix(i, j);
          r.model = model.matrix(i, j);
          r.abs_err = std::abs(r.value - r.model);
          r.abs_err_sqrtk = r.abs_err * std::sqrt(static_cast<double>(k));
          cells[c].push_back(std::move(r));
        }
    }
    if (operators) ops[c] = std::move(op);
  });
  ConvergenceReport report;
  for (auto& c : cells)
    for (auto& r : c) report.rows.push_back(std::move(r));
  if (operators)
    for (auto& o : ops) operators->push_back(std::move(*o));
  return report;
}

}  // namespace kodaira
