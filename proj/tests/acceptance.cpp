// Acceptance gate: one PASS/FAIL line per criterion. Exit status is nonzero
// when any selected criterion fails.
//
//   acceptance                 run every criterion
//   acceptance --criterion N   run only criterion N

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kodaira/experiment.hpp"
#include "kodaira/kodaira.hpp"
#include "oracles.hpp"

using namespace kodaira;
namespace ex = kodaira::experiment;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string sci(double x, int digits = 3) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

ex::ExperimentConfig config(const std::string& name) { return ex::load_config(fs::path(KODAIRA_CONFIG_DIR) / name); }

template <class T>
const T& body(const ex::ExperimentConfig& c) {
  return std::get<T>(c.body);
}

std::string within_budget(double elapsed, double budget, bool& ok) {
  ok = ok && elapsed < budget;
  return "runtime " + sci(elapsed) + " s (limit " + sci(budget) + " s)";
}

// ---------------------------------------------------------------------------

Outcome model_consistency() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20250101);
  std::uniform_real_distribution<double> lam(-3.0, 3.0), time(0.1, 5.0);
  std::uniform_int_distribution<int> dim(1, 4);
  double worst = 0.0;
  for (int s = 0; s < 200; ++s) {
    const int n = dim(rng);
    std::vector<double> l(static_cast<std::size_t>(n));
    for (auto& x : l) x = lam(rng);
    const int q = std::uniform_int_distribution<int>(0, n)(rng);
    const double t = time(rng);
    const CMatrix a = asymptotic_diagonal(CurvatureEndomorphism::diagonal(l), q, t).matrix;
    const CMatrix b = model_diagonal(ModelSpec(n, l, q), t).matrix;
    const double scale = b.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        const double ref = std::abs(b(i, j)) > 0.0 ? std::abs(b(i, j)) : scale;
        worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / ref);
      }
  }
  bool ok = worst <= 1e-12;
  const auto budget = within_budget(seconds_since(start), 5.0, ok);
  return {ok, "worst entrywise relative difference " + sci(worst) + " over 200 samples (tol 1e-12), " + budget};
}

Outcome degenerate_limit() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string where;
  for (double l : {1e-6, -1e-6, 1e-9, -1e-9, 0.0})
    for (double t : {0.5, 1.0, 2.0}) {
      const double ref = 1.0 / (2.0 * pi * t);
      const double v = model_diagonal(ModelSpec(1, {l}, 0), t).matrix(0, 0).real();
      const double g = asymptotic_diagonal(CurvatureEndomorphism::diagonal({l}), 0, t).matrix(0, 0).real();
      const double dev = std::max(std::abs(v - ref), std::abs(g - ref)) / ref;
      if (dev > worst) {
        worst = dev;
        where = "lambda=" + sci(l) + " t=" + sci(t);
      }
    }
  bool ok = worst <= 1e-6;
  const auto budget = within_budget(seconds_since(start), 1.0, ok);
  return {ok, "worst relative deviation from 1/(2 pi t) " + sci(worst, 8) + " at " + where + " (tol 1e-6), " + budget};
}

Outcome free_limit() {
  const auto start = Clock::now();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-2.0, 2.0), time(0.1, 5.0);
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    const int n = 1 + s % 2;
    CVector z(n), w(n);
    for (int j = 0; j < n; ++j) {
      z(j) = Complex(coord(rng), coord(rng));
      w(j) = Complex(coord(rng), coord(rng));
    }
    const double t = time(rng);
    double dist2 = 0.0;
    for (int j = 0; j < n; ++j) dist2 += std::norm(z(j) - w(j));
    const double gauss = std::pow(2.0 * pi * t, -n) * std::exp(-dist2 / (2.0 * t));
    const ModelSpec flat(n, std::vector<double>(static_cast<std::size_t>(n), 0.0), 0);
    worst = std::max(worst, std::abs(mehler_scalar(flat, t, z, w, MehlerReading::symmetric, Measure::lebesgue) - gauss));
  }
  bool ok = worst <= 1e-12;
  const auto budget = within_budget(seconds_since(start), 1.0, ok);
  return {ok, "worst |kernel - Gaussian| " + sci(worst) + " over 50 samples (tol 1e-12), " + budget};
}

Outcome residual_arbiter() {
  const auto start = Clock::now();
  const std::vector<std::vector<double>> lambdas = {{1.0}, {-1.5}, {0.3}, {0.7, -0.4}, {2.0, 1.0}};
  const std::vector<double> times = {0.25, 0.5, 1.0, 2.0, 4.0};
  double worst_symmetric = 0.0, worst_printed = 0.0;
  bool default_is_symmetric = true;
  for (const auto& l : lambdas) {
    const int n = static_cast<int>(l.size());
    CVector z(n), w(n);
    for (int j = 0; j < n; ++j) {
      z(j) = Complex(0.4 - 0.3 * j, -0.2 + 0.25 * j);
      w(j) = Complex(-0.3 + 0.1 * j, 0.5 - 0.2 * j);
    }
    for (int q = 0; q <= n; ++q) {
      const ModelSpec spec(n, l, q);
      const double theta = spec.theta0().front();
      for (double t : times) {
        for (auto reading : {MehlerReading::symmetric, MehlerReading::as_printed}) {
          auto K = [&](double s, const CVector& x) { return model_kernel(spec, s, x, w, reading).value.matrix(0, 0); };
          const double r = oracle::heat_residual(l, theta, K, t, z);
          double& worst = reading == MehlerReading::symmetric ? worst_symmetric : worst_printed;
          worst = std::max(worst, r);
        }
        const CMatrix d = model_kernel(spec, t, z, w).value.matrix;
        const CMatrix s = model_kernel(spec, t, z, w, MehlerReading::symmetric).value.matrix;
        default_is_symmetric = default_is_symmetric && (d - s).cwiseAbs().maxCoeff() == 0.0;
      }
    }
  }
  const bool symmetric_passes = worst_symmetric <= 1e-4, printed_passes = worst_printed <= 1e-4;
  bool ok = symmetric_passes != printed_passes && symmetric_passes && default_is_symmetric;
  const auto budget = within_budget(seconds_since(start), 30.0, ok);
  return {ok, "worst residual symmetric " + sci(worst_symmetric) + ", as printed " + sci(worst_printed) +
                  " (tol 1e-4); default reading " + (default_is_symmetric ? "symmetric" : "other") + ", " + budget};
}

Outcome spacing_convergence() {
  const auto start = Clock::now();
  const auto cfg = config("spacing_convergence.json");
  const auto& c = body<ex::ConvergeConfig>(cfg);
  const auto result = ex::run_converge(c);
  const double elapsed = seconds_since(start);
  bool ok = true;
  std::ostringstream d;
  for (int q : c.q) {
    std::vector<double> hs, errs;
    double model = 0.0;
    for (const auto& r : result.spacing_rows)
      if (r.q == q) {
        hs.push_back(r.spacing);
        errs.push_back(r.max_error());
        model = r.model.matrix.cwiseAbs().maxCoeff();
      }
    // least-squares slope of log error against log h
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      mx += std::log(hs[i]) / hs.size();
      my += std::log(errs[i]) / hs.size();
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      sxy += (std::log(hs[i]) - mx) * (std::log(errs[i]) - my);
      sxx += (std::log(hs[i]) - mx) * (std::log(hs[i]) - mx);
    }
    const double order = sxy / sxx;
    bool decreasing = true;
    for (std::size_t i = 1; i < errs.size(); ++i) decreasing = decreasing && errs[i] < errs[i - 1];
    const double final_rel = errs.back() / model;
    const bool q_ok = decreasing && std::abs(order - 2.0) <= 0.4 && final_rel <= 0.02;
    ok = ok && q_ok;
    d << "q=" << q << (q_ok ? " ok" : " FAILS") << ": errors";
    for (double e : errs) d << ' ' << sci(e);
    d << " order " << sci(order) << " (pairwise";
    for (std::size_t i = 1; i < errs.size(); ++i) d << ' ' << sci(std::log(errs[i - 1] / errs[i]) / std::log(hs[i - 1] / hs[i]));
    d << "), final " << sci(100 * final_rel) << "%; ";
  }
  d << "target order 2.0 +- 0.4, final <= 2%, " << within_budget(elapsed, 120.0, ok);
  return {ok, d.str()};
}

struct ScalingRun {
  ex::ConvergeResult result;
  std::vector<int> ks;
  std::vector<double> ts;
  double seconds = 0.0;
};

const ScalingRun& scaling_run() {
  static std::optional<ScalingRun> cached;
  if (!cached) {
    const auto start = Clock::now();
    const auto cfg = config("scaling_convergence.json");
    const auto& c = body<ex::ConvergeConfig>(cfg);
    cached = ScalingRun{ex::run_converge(c), c.k, c.t, 0.0};
    cached->seconds = seconds_since(start);
  }
  return *cached;
}

Outcome scaling_convergence() {
  const auto& run = scaling_run();
  bool ok = true;
  std::ostringstream d;
  for (double t : run.ts) {
    bool decreasing = true;
    d << "t=" << t << ": errors";
    for (std::size_t i = 0; i < run.ks.size(); ++i) {
      const double e = run.result.report.max_error(run.ks[i], t);
      d << ' ' << sci(e, 4);
      if (i > 0) decreasing = decreasing && e < run.result.report.max_error(run.ks[i - 1], t);
    }
    const double last = run.result.report.max_error(run.ks.back(), t);
    const double base = run.result.baseline.max_error(run.ks.back(), t);
    const bool close = last <= 1.5 * base;
    ok = ok && decreasing && close;
    d << (decreasing ? " strictly decreasing" : " NOT decreasing") << ", k=" << run.ks.back() << " ratio to baseline "
      << sci(last / base, 5) << (close ? "" : " (exceeds 1.5)") << "; ";
  }
  d << within_budget(run.seconds, 600.0, ok);
  return {ok, d.str()};
}

Outcome uniform_bound() {
  const auto& run = scaling_run();
  bool ok = true;
  std::ostringstream d;
  for (double t : run.ts) {
    double worst = 0.0, model = 0.0;
    for (int k : run.ks) worst = std::max(worst, run.result.report.max_value(k, t));
    for (const auto& r : run.result.report.rows)
      if (r.t == t) model = std::max(model, std::abs(r.model));
    ok = ok && worst <= 2.0 * model;
    d << "t=" << t << ": max_k |diagonal| " << sci(worst, 6) << " vs 2 x model " << sci(2.0 * model, 6) << "; ";
  }
  return {ok, d.str()};
}

Outcome spectral_bound() {
  const auto start = Clock::now();
  std::size_t checks = 0, failures = 0, sparse = 0;
  double worst_ratio = 0.0;
  for (const char* name : {"spectral_bound_model.json", "spectral_bound_scaled.json"}) {
    const auto cfg = config(name);
    const auto result = ex::run_converge(body<ex::ConvergeConfig>(cfg));
    for (const auto& s : result.spectral) {
      ++checks;
      if (!s.result.passed) ++failures;
      if (!s.result.dense) ++sparse;
      worst_ratio = std::max(worst_ratio, s.result.max_value / s.result.bound);
    }
  }
  const std::size_t expected = (3 * 2 + 4) * 12;  // operators x (N, t) pairs
  bool ok = failures == 0 && checks == expected;
  const auto budget = within_budget(seconds_since(start), 60.0, ok);
  return {ok, std::to_string(checks) + " checks (" + std::to_string(sparse) + " sparse), " + std::to_string(failures) +
                  " failures, max value/bound " + sci(worst_ratio, 6) + ", " + budget};
}

Outcome torus_traces() {
  const auto start = Clock::now();
  const auto cfg = config("torus_traces.json");
  const auto result = ex::run_morse(body<ex::MorseConfig>(cfg));
  double worst_trace = 0.0, worst_equality = 0.0, min_gap = std::numeric_limits<double>::infinity();
  bool all_hold = true;
  for (const auto& x : result.traces)
    worst_trace = std::max(worst_trace, std::abs(x.closed_form - x.truncated) / std::max(1.0, std::abs(x.closed_form)));
  for (const auto& r : result.records) {
    all_hold = all_hold && r.holds;
    if (r.q == 1) worst_equality = std::max(worst_equality, std::abs(r.gap));
    if (r.q == 0) min_gap = std::min(min_gap, r.gap);
  }
  bool ok = worst_trace <= 1e-12 && worst_equality <= 1e-10 && min_gap > 0.0 && all_hold && result.records.size() == 60;
  const auto budget = within_budget(seconds_since(start), 1.0, ok);
  return {ok, "closed form vs truncated " + sci(worst_trace) + " (tol 1e-12), q=1 equality defect " + sci(worst_equality) +
                  " (tol 1e-10), smallest q=0 gap " + sci(min_gap) + ", " + budget};
}

Outcome oracle_validation() {
  const auto start = Clock::now();
  const auto cfg = config("landau_oracle.json");
  const auto runs = ex::run_oracle(body<ex::OracleConfig>(cfg));
  bool ok = true;
  std::vector<long long> seen;
  std::ostringstream d;
  for (const auto& r : runs) {
    const EllipticCurveBundle b(body<ex::OracleConfig>(cfg).tau, r.params.degree);
    const long long kd = static_cast<long long>(r.params.k) * r.params.degree;
    const auto table = landau_spectrum(b, r.params.k, r.params.q, 2);
    bool inside = true;
    double worst = 0.0;
    for (std::size_t i = 0; i < r.table.size(); ++i) {
      const double err = std::abs(r.oracle.extrapolated[i] - r.table[i]);
      inside = inside && err <= r.oracle.error_estimate[i];
      worst = std::max(worst, err / r.oracle.error_estimate[i]);
    }
    if (r.params.q == 0 && kd > 0) {
      seen.push_back(kd);
      const bool rr = table.levels.front().multiplicity == kd && riemann_roch(b, r.params.k).h0 == kd &&
                      r.oracle.ground_multiplicity == kd;
      ok = ok && rr;
      d << "kd=" << kd << " ground " << r.oracle.ground_multiplicity << (rr ? "" : " MISMATCH");
    } else {
      ok = ok && r.oracle.ground_multiplicity == r.expected_ground;
      d << "k=" << r.params.k << " d=" << r.params.degree << " q=" << r.params.q << " ground " << r.oracle.ground_multiplicity;
    }
    ok = ok && inside;
    d << " max err/estimate " << sci(worst) << "; ";
  }
  std::sort(seen.begin(), seen.end());
  ok = ok && seen == std::vector<long long>{1, 2, 3, 6};
  d << within_budget(seconds_since(start), 300.0, ok);
  return {ok, d.str()};
}

Outcome morse_integrals() {
  const auto start = Clock::now();
  const auto cfg = config("product_torus.json");
  const auto& c = body<ex::MorseConfig>(cfg);
  const EllipticCurveBundle b1(c.curve.tau, c.curve.degree), b2(c.second_curve->tau, c.second_curve->degree);
  const auto field = product_torus_curvature_field(b1, b2, c.cells, c.modulation);
  bool all_index_one = true;
  for (std::size_t i = 0; i < field.size(); ++i) all_index_one = all_index_one && morse_index(field.curvatures[i]) == 1;
  const double slope = static_cast<double>(c.curve.degree) * std::abs(c.second_curve->degree);
  const double q1 = morse_bound(field, 1).value, q0 = morse_bound(field, 0).value;
  const auto result = ex::run_morse(c);
  bool records_ok = true;
  for (const auto& r : result.product) records_ok = records_ok && r.morse_holds && r.traces.holds;
  const double rel = std::abs(q1 - slope) / slope;
  bool ok = rel <= 0.005 && q0 == 0.0 && all_index_one && records_ok;
  const auto budget = within_budget(seconds_since(start), 10.0, ok);
  return {ok, "q=1 integral " + sci(q1, 10) + " vs d1|d2| = " + sci(slope) + " (rel " + sci(rel) + ", tol 0.5%), q=0 bound " +
                  sci(q0) + (all_index_one ? ", field index 1 everywhere" : ", field NOT index 1") + ", " + budget};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto start = Clock::now();
  const fs::path root = fs::temp_directory_path() / "kodaira_acceptance_determinism";
  fs::remove_all(root);
  std::size_t compared = 0;
  bool ok = true;
  std::string bad;
  for (const char* name : {"scaling_convergence.json", "mehler_residual.json", "flat_trace.json", "torus_traces.json"}) {
    std::vector<fs::path> dirs;
    for (int rep = 0; rep < 2; ++rep) {
      dirs.push_back(root / (std::string(name) + "." + std::to_string(rep)));
      const std::string cmd = std::string("\"") + KODAIRA_LAB_EXE + "\" run \"" + (fs::path(KODAIRA_CONFIG_DIR) / name).string() +
                              "\" --out \"" + dirs.back().string() + "\" --threads " + std::to_string(1 + 2 * rep) +
                              " > /dev/null 2>&1";
      const int raw = std::system(cmd.c_str());
      if (!WIFEXITED(raw) || WEXITSTATUS(raw) != 0) {
        ok = false;
        bad += std::string(" ") + name + " (exit)";
      }
    }
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      if (entry.path().extension() != ".csv") continue;
      ++compared;
      if (slurp(entry.path()) != slurp(dirs[1] / entry.path().filename())) {
        ok = false;
        bad += " " + entry.path().filename().string();
      }
    }
  }
  ok = ok && compared >= 4;
  const auto budget = within_budget(seconds_since(start), 60.0, ok);
  return {ok, std::to_string(compared) + " CSV files compared across repeated runs" + (bad.empty() ? "" : ", differing:" + bad) +
                  ", " + budget};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "model consistency", model_consistency},   {2, "degenerate limit", degenerate_limit},
      {3, "free limit", free_limit},                 {4, "heat-equation residual arbiter", residual_arbiter},
      {5, "grid refinement convergence", spacing_convergence}, {6, "scaling convergence", scaling_convergence},
      {7, "uniform bound", uniform_bound},           {8, "spectral bound", spectral_bound},
      {9, "exact torus traces", torus_traces},       {10, "oracle validation", oracle_validation},
      {11, "Morse integrals", morse_integrals},      {12, "determinism", determinism},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::cerr << "no criterion " << only << '\n';
    return 2;
  }
  int failed = 0;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.passed) ++failed;
    std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail << " ["
              << sci(seconds_since(start)) << " s]" << std::endl;
  }
  return failed ? 1 : 0;
}
