#pragma once

// JSON experiment configs and their dispatch onto the numerical modules.
// Requires nlohmann/json on the include path (the kodaira_vendor target).

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "kodaira/discrete_operator.hpp"
#include "kodaira/exact_models.hpp"
#include "kodaira/geometry.hpp"
#include "kodaira/heat_semigroup.hpp"
#include "kodaira/model_kernel.hpp"

namespace kodaira::experiment {

using json = nlohmann::json;

inline constexpr const char* tool_version = "1.0.0";

/// Malformed or out-of-range configuration. `field` is the dotted path of
/// the offending entry, empty for syntax errors.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string field) : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Parses JSON rejecting duplicate keys at any depth.
inline json parse_strict(const std::string& text) {
  std::vector<std::set<std::string>> seen;
  const json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
    switch (event) {
      case json::parse_event_t::object_start:
        seen.emplace_back();
        break;
      case json::parse_event_t::object_end:
        seen.pop_back();
        break;
      case json::parse_event_t::key: {
        const auto key = parsed.get<std::string>();
        if (!seen.back().insert(key).second) throw ConfigError("duplicate key \"" + key + "\"", key);
        break;
      }
      default:
        break;
    }
    return true;
  };
  try {
    return json::parse(text, cb);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(), "");
  }
}

namespace detail {

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, int>) return "an integer";
  else if constexpr (std::is_same_v<T, double>) return "a number";
  else if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else return "a list";
}

template <class T>
T convert(const json& v, const std::string& where) {
  const auto bad = [&] { return ConfigError(where + ": expected " + type_name<T>(), where); };
  if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) throw bad();
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) throw bad();
    return static_cast<int>(x);
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw bad();
    return v.get<double>();
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw bad();
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw bad();
    return v.get<std::string>();
  } else {
    using E = typename T::value_type;
    T out;
    // a bare scalar stands for a one-element list
    if (!v.is_array()) {
      out.push_back(convert<E>(v, where));
      return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<E>(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
  }
}

template <class T>
json to_json(const T& v) {
  return json(v);
}

}  // namespace detail

/// One JSON object being read: tracks which keys were consumed, rejects the
/// rest, and builds the normalized echo with defaults filled in.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object", path_);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return obj_.contains(key); }

  template <class T>
  T get(const std::string& key) {
    if (!obj_.contains(key)) throw ConfigError("missing required field \"" + where(key) + "\"", where(key));
    used_.insert(key);
    T v = detail::convert<T>(obj_.at(key), where(key));
    normalized_[key] = detail::to_json(v);
    return v;
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!obj_.contains(key)) {
      normalized_[key] = detail::to_json(fallback);
      return fallback;
    }
    return get<T>(key);
  }

  Section child(const std::string& key) {
    if (!obj_.contains(key)) throw ConfigError("missing required field \"" + where(key) + "\"", where(key));
    used_.insert(key);
    return Section(obj_.at(key), where(key));
  }

  /// Array of objects under `key`.
  std::vector<Section> children(const std::string& key) {
    if (!obj_.contains(key)) throw ConfigError("missing required field \"" + where(key) + "\"", where(key));
    used_.insert(key);
    const json& arr = obj_.at(key);
    if (!arr.is_array() || arr.empty()) throw ConfigError(where(key) + ": expected a non-empty list", where(key));
    std::vector<Section> out;
    for (std::size_t i = 0; i < arr.size(); ++i) out.emplace_back(arr[i], where(key) + "[" + std::to_string(i) + "]");
    return out;
  }

  void forbid(const std::string& key, const std::string& reason) const {
    if (obj_.contains(key)) throw ConfigError(where(key) + " is not allowed " + reason, where(key));
  }

  void set(const std::string& key, json value) { normalized_[key] = std::move(value); }

  /// Rejects unknown keys and returns the normalized object.
  json finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown field \"" + where(it.key()) + "\"", where(it.key()));
    return normalized_;
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
  json normalized_ = json::object();
};

inline void require(bool ok, const std::string& field, const std::string& constraint) {
  if (!ok) throw ConfigError(field + " must satisfy " + constraint, field);
}

template <class T>
void require_nonempty(const std::vector<T>& v, const std::string& field) {
  require(!v.empty(), field, "a non-empty list");
}

// ---------------------------------------------------------------------------
// Per-kind configurations.

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct ModelKernelConfig {
  std::string check = "diagonal";  // diagonal | consistency | free-limit | residual
  std::vector<std::vector<double>> cases;
  std::vector<int> q;
  std::vector<double> t;
  std::vector<std::pair<CVector, CVector>> points;
  Measure measure = Measure::hermitian;
  MehlerReading reading = MehlerReading::symmetric;
  int samples = 0;
  int max_n = 1;
  Range lambda_range{-3.0, 3.0};
  Range t_range{0.1, 5.0};
  double point_radius = 1.0;
};

struct ConvergeConfig {
  std::string sweep = "k";  // k | spacing
  std::vector<double> lambda;
  double cubic = 0.0;
  double metric_linear = 0.0;
  std::vector<int> q;
  std::vector<double> t;
  std::vector<int> k;
  double radius = 6.0;
  std::vector<double> spacing;
  std::string method = "krylov";
  bool baseline = false;
  std::vector<int> bound_powers;  // spectral-bound check, empty when absent
  std::vector<double> bound_times;
};

struct TraceConfig {
  std::vector<double> lambda;
  double cubic = 0.0;
  double metric_linear = 0.0;
  int q = 0;
  int k = 1;
  std::vector<double> t;
  double radius = 2.0;
  double spacing = 0.25;
  std::string method = "auto";
  int probes = defaults::trace_probes;
};

struct CurveConfig {
  Complex tau{0.0, 1.0};
  int degree = 1;
};

struct MorseConfig {
  CurveConfig curve;
  std::optional<CurveConfig> second_curve;
  std::vector<int> k;
  std::vector<int> q;
  std::vector<double> t;
  int cells = 8;
  double modulation = 0.0;
};

struct SpectrumConfig {
  CurveConfig curve;
  int k = 1;
  int q = 0;
  int levels = 10;
};

struct OracleCase {
  int k = 1;
  int degree = 1;
  int q = 0;
};

struct OracleConfig {
  Complex tau{0.0, 1.0};
  std::vector<OracleCase> cases;
  int count = 10;
  int points = 32;
};

using KindConfig = std::variant<ModelKernelConfig, ConvergeConfig, TraceConfig, MorseConfig, SpectrumConfig, OracleConfig>;

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 0;
  std::string output;
  KindConfig body;
  json normalized;
};

namespace detail {

inline Range read_range(Section& s, const std::string& key, Range fallback) {
  const auto v = s.get<std::vector<double>>(key, {fallback.lo, fallback.hi});
  require(v.size() == 2 && v[0] <= v[1], s.where(key), "[low, high] with low <= high");
  return {v[0], v[1]};
}

inline CVector read_point(Section& s, const std::string& key, int n) {
  const auto flat = s.get<std::vector<std::vector<double>>>(key);
  require(static_cast<int>(flat.size()) == n, s.where(key), "one [re, im] pair per complex dimension");
  CVector z(n);
  for (int j = 0; j < n; ++j) {
    require(flat[static_cast<std::size_t>(j)].size() == 2, s.where(key), "one [re, im] pair per complex dimension");
    z(j) = Complex(flat[static_cast<std::size_t>(j)][0], flat[static_cast<std::size_t>(j)][1]);
  }
  return z;
}

inline void check_times(const std::vector<double>& t, const std::string& field) {
  require_nonempty(t, field);
  for (double x : t) require(x > 0.0 && std::isfinite(x), field, "t > 0");
}

inline void check_lambda(const std::vector<double>& l, const std::string& field) {
  require(!l.empty() && static_cast<int>(l.size()) <= max_complex_dimension, field,
          "1 <= length <= " + std::to_string(max_complex_dimension));
  for (double x : l) require(std::isfinite(x), field, "finite entries");
}

inline void check_degrees(const std::vector<int>& q, int n, const std::string& field) {
  require_nonempty(q, field);
  for (int x : q) require(x >= 0 && x <= n, field, "0 <= q <= n");
}

inline void check_powers(const std::vector<int>& k, const std::string& field) {
  require_nonempty(k, field);
  for (int x : k) require(x >= 1, field, "k >= 1");
}

inline CurveConfig read_curve(Section& parent, const std::string& key) {
  Section s = parent.child(key);
  CurveConfig c;
  const auto tau = s.get<std::vector<double>>("tau");
  require(tau.size() == 2 && tau[1] > 0.0, s.where("tau"), "[re, im] with im > 0");
  c.tau = Complex(tau[0], tau[1]);
  c.degree = s.get<int>("degree");
  require(c.degree != 0, s.where("degree"), "degree != 0");
  parent.set(key, s.finish());
  return c;
}

inline void read_perturbation(Section& s, double& cubic, double& metric_linear) {
  if (!s.has("perturbation")) {
    s.set("perturbation", json{{"cubic", 0.0}, {"metric_linear", 0.0}});
    return;
  }
  Section p = s.child("perturbation");
  cubic = p.get<double>("cubic", 0.0);
  metric_linear = p.get<double>("metric_linear", 0.0);
  require(std::isfinite(cubic), p.where("cubic"), "a finite value");
  require(std::isfinite(metric_linear), p.where("metric_linear"), "a finite value");
  s.set("perturbation", p.finish());
}

inline ModelKernelConfig read_model_kernel(Section& s) {
  ModelKernelConfig c;
  c.check = s.get<std::string>("check", "diagonal");
  const std::string m = s.get<std::string>("measure", "hermitian");
  require(m == "hermitian" || m == "lebesgue", s.where("measure"), "one of hermitian, lebesgue");
  c.measure = m == "hermitian" ? Measure::hermitian : Measure::lebesgue;
  if (c.check == "diagonal") {
    if (s.has("lambda_cases")) {
      s.forbid("lambda", "together with lambda_cases");
      c.cases = s.get<std::vector<std::vector<double>>>("lambda_cases");
      require_nonempty(c.cases, s.where("lambda_cases"));
    } else {
      c.cases = {s.get<std::vector<double>>("lambda")};
    }
    const int n = static_cast<int>(c.cases.front().size());
    for (const auto& l : c.cases) {
      check_lambda(l, s.where("lambda"));
      require(static_cast<int>(l.size()) == n, s.where("lambda_cases"), "equal lengths");
    }
    c.q = s.get<std::vector<int>>("q");
    check_degrees(c.q, n, s.where("q"));
    c.t = s.get<std::vector<double>>("t");
    check_times(c.t, s.where("t"));
    const std::string r = s.get<std::string>("reading", "symmetric");
    require(r == "symmetric" || r == "as-printed", s.where("reading"), "one of symmetric, as-printed");
    c.reading = r == "symmetric" ? MehlerReading::symmetric : MehlerReading::as_printed;
    if (s.has("points")) {
      json pts = json::array();
      for (auto& p : s.children("points")) {
        c.points.emplace_back(read_point(p, "z", n), read_point(p, "w", n));
        pts.push_back(p.finish());
      }
      s.set("points", pts);
    }
    return c;
  }
  require(c.check == "consistency" || c.check == "free-limit" || c.check == "residual", s.where("check"),
          "one of diagonal, consistency, free-limit, residual");
  c.samples = s.get<int>("samples");
  require(c.samples >= 1 && c.samples <= 100000, s.where("samples"), "1 <= samples <= 100000");
  c.max_n = s.get<int>("max_n", c.check == "consistency" ? 4 : 2);
  require(c.max_n >= 1 && c.max_n <= 8, s.where("max_n"), "1 <= max_n <= 8");
  c.t_range = read_range(s, "t_range", c.t_range);
  require(c.t_range.lo > 0.0, s.where("t_range"), "t > 0");
  if (c.check != "free-limit") c.lambda_range = read_range(s, "lambda_range", c.lambda_range);
  if (c.check != "consistency") {
    c.point_radius = s.get<double>("point_radius", 1.0);
    require(c.point_radius > 0.0, s.where("point_radius"), "point_radius > 0");
  }
  return c;
}

inline ConvergeConfig read_converge(Section& s) {
  ConvergeConfig c;
  c.sweep = s.get<std::string>("sweep", "k");
  require(c.sweep == "k" || c.sweep == "spacing", s.where("sweep"), "one of k, spacing");
  c.lambda = s.get<std::vector<double>>("lambda");
  check_lambda(c.lambda, s.where("lambda"));
  const int n = static_cast<int>(c.lambda.size());
  c.q = s.get<std::vector<int>>("q");
  check_degrees(c.q, n, s.where("q"));
  c.t = s.get<std::vector<double>>("t");
  check_times(c.t, s.where("t"));
  {
    Section g = s.child("grid");
    c.radius = g.get<double>("radius");
    require(c.radius > 0.0 && std::isfinite(c.radius), g.where("radius"), "r > 0");
    c.spacing = g.get<std::vector<double>>("spacing");
    require_nonempty(c.spacing, g.where("spacing"));
    for (double h : c.spacing) require(h > 0.0 && std::isfinite(h), g.where("spacing"), "h > 0");
    if (c.sweep == "k") require(c.spacing.size() == 1, g.where("spacing"), "a single value for a k sweep");
    s.set("grid", g.finish());
  }
  if (c.sweep == "k") {
    c.k = s.get<std::vector<int>>("k");
    check_powers(c.k, s.where("k"));
    for (std::size_t i = 1; i < c.k.size(); ++i) require(c.k[i] > c.k[i - 1], s.where("k"), "strictly increasing");
    read_perturbation(s, c.cubic, c.metric_linear);
    c.baseline = s.get<bool>("baseline", false);
  } else {
    s.forbid("k", "in a spacing sweep");
    s.forbid("perturbation", "in a spacing sweep");
    s.forbid("baseline", "in a spacing sweep");
  }
  c.method = s.get<std::string>("method", c.sweep == "k" ? "krylov" : "auto");
  require(c.method == "auto" || c.method == "dense" || c.method == "krylov" || c.method == "crank-nicolson",
          s.where("method"), "one of auto, dense, krylov, crank-nicolson");
  if (s.has("spectral_bound")) {
    Section b = s.child("spectral_bound");
    c.bound_powers = b.get<std::vector<int>>("N");
    require_nonempty(c.bound_powers, b.where("N"));
    for (int N : c.bound_powers) require(N >= 0, b.where("N"), "N >= 0");
    c.bound_times = b.get<std::vector<double>>("t");
    check_times(c.bound_times, b.where("t"));
    s.set("spectral_bound", b.finish());
  }
  return c;
}

inline TraceConfig read_trace(Section& s) {
  TraceConfig c;
  c.lambda = s.get<std::vector<double>>("lambda");
  check_lambda(c.lambda, s.where("lambda"));
  c.q = s.get<int>("q");
  require(c.q >= 0 && c.q <= static_cast<int>(c.lambda.size()), s.where("q"), "0 <= q <= n");
  c.k = s.get<int>("k", 1);
  require(c.k >= 1, s.where("k"), "k >= 1");
  c.t = s.get<std::vector<double>>("t");
  check_times(c.t, s.where("t"));
  Section g = s.child("grid");
  c.radius = g.get<double>("radius");
  require(c.radius > 0.0 && std::isfinite(c.radius), g.where("radius"), "r > 0");
  c.spacing = g.get<double>("spacing");
  require(c.spacing > 0.0 && std::isfinite(c.spacing), g.where("spacing"), "h > 0");
  s.set("grid", g.finish());
  read_perturbation(s, c.cubic, c.metric_linear);
  c.method = s.get<std::string>("method", "auto");
  require(c.method == "auto" || c.method == "dense" || c.method == "krylov" || c.method == "crank-nicolson",
          s.where("method"), "one of auto, dense, krylov, crank-nicolson");
  c.probes = s.get<int>("probes", defaults::trace_probes);
  require(c.probes >= 2, s.where("probes"), "probes >= 2");
  return c;
}

inline MorseConfig read_morse(Section& s) {
  MorseConfig c;
  c.curve = read_curve(s, "curve");
  int top = 1;
  if (s.has("second_curve")) {
    c.second_curve = read_curve(s, "second_curve");
    require(c.curve.degree > 0 && c.second_curve->degree < 0, s.where("second_curve.degree"),
            "first degree > 0 > second degree");
    top = 2;
    c.cells = s.get<int>("cells", 8);
    require(c.cells >= 1 && c.cells <= 4096, s.where("cells"), "1 <= cells <= 4096");
    c.modulation = s.get<double>("modulation", 0.0);
    require(std::abs(c.modulation) < 1.0, s.where("modulation"), "|modulation| < 1");
  } else {
    s.forbid("cells", "without second_curve");
    s.forbid("modulation", "without second_curve");
  }
  c.k = s.get<std::vector<int>>("k");
  check_powers(c.k, s.where("k"));
  c.q = s.get<std::vector<int>>("q");
  check_degrees(c.q, top, s.where("q"));
  c.t = s.get<std::vector<double>>("t");
  check_times(c.t, s.where("t"));
  return c;
}

inline SpectrumConfig read_spectrum(Section& s) {
  SpectrumConfig c;
  c.curve = read_curve(s, "curve");
  c.k = s.get<int>("k");
  require(c.k >= 1, s.where("k"), "k >= 1");
  c.q = s.get<int>("q");
  require(c.q == 0 || c.q == 1, s.where("q"), "0 <= q <= 1");
  c.levels = s.get<int>("levels", 10);
  require(c.levels >= 1 && c.levels <= 100000, s.where("levels"), "1 <= levels <= 100000");
  return c;
}

inline OracleConfig read_oracle(Section& s) {
  OracleConfig c;
  const auto tau = s.get<std::vector<double>>("tau");
  require(tau.size() == 2 && tau[1] > 0.0, s.where("tau"), "[re, im] with im > 0");
  c.tau = Complex(tau[0], tau[1]);
  json cases = json::array();
  for (auto& e : s.children("cases")) {
    OracleCase oc;
    oc.k = e.get<int>("k");
    require(oc.k >= 1, e.where("k"), "k >= 1");
    oc.degree = e.get<int>("degree");
    require(oc.degree != 0, e.where("degree"), "degree != 0");
    oc.q = e.get<int>("q");
    require(oc.q == 0 || oc.q == 1, e.where("q"), "0 <= q <= 1");
    c.cases.push_back(oc);
    cases.push_back(e.finish());
  }
  s.set("cases", cases);
  c.count = s.get<int>("count", 10);
  require(c.count >= 1 && c.count <= 200, s.where("count"), "1 <= count <= 200");
  c.points = s.get<int>("points", 32);
  require(c.points >= 8 && c.points <= 256, s.where("points"), "8 <= points <= 256");
  return c;
}

inline std::string default_output(const std::string& kind) {
  if (kind == "model-kernel") return "model_kernel.csv";
  if (kind == "converge") return "convergence.csv";
  if (kind == "validate-oracle") return "oracle.csv";
  return kind + ".csv";
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& root) {
  Section s(root, "");
  ExperimentConfig cfg;
  cfg.kind = s.get<std::string>("experiment");
  const long long seed = s.has("seed") ? s.get<int>("seed") : 0;
  if (!s.has("seed")) s.set("seed", 0);
  require(seed >= 0, "seed", "seed >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);
  if (s.has("description")) s.get<std::string>("description");
  if (cfg.kind == "model-kernel") cfg.body = detail::read_model_kernel(s);
  else if (cfg.kind == "converge") cfg.body = detail::read_converge(s);
  else if (cfg.kind == "trace") cfg.body = detail::read_trace(s);
  else if (cfg.kind == "morse") cfg.body = detail::read_morse(s);
  else if (cfg.kind == "spectrum") cfg.body = detail::read_spectrum(s);
  else if (cfg.kind == "validate-oracle") cfg.body = detail::read_oracle(s);
  else
    throw ConfigError("experiment must be one of model-kernel, converge, trace, morse, spectrum, validate-oracle", "experiment");
  cfg.output = s.get<std::string>("output", detail::default_output(cfg.kind));
  require(!cfg.output.empty() && cfg.output.find('/') == std::string::npos && cfg.output != "manifest.json", "output",
          "a plain file name other than manifest.json");
  cfg.normalized = s.finish();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string(), "");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(parse_strict(text.str()));
}

/// FNV-1a over the compact normalized config.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : cfg.normalized.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Weights and perturbations expressible in a config.

/// c·Re(z₁³). Its complex Hessian vanishes identically.
inline AnalyticPerturbation cubic_real_part(double c) {
  AnalyticPerturbation p;
  if (c == 0.0) return p;
  p.value = [c](const CVector& z) { return c * std::real(z(0) * z(0) * z(0)); };
  p.dbar_gradient = [c](const CVector& z) {
    CVector g = CVector::Zero(z.size());
    g(0) = 1.5 * c * std::conj(z(0) * z(0));
    return g;
  };
  p.complex_hessian = [](const CVector& z) { return CMatrix::Zero(z.size(), z.size()).eval(); };
  return p;
}

/// Frame perturbation r_{jj}(z) = c·z_j, off-diagonal entries zero.
inline PerturbationSpec linear_metric(double c) {
  PerturbationSpec p;
  if (c == 0.0) return p;
  p.metric = [c](const CVector& z) {
    CMatrix r = CMatrix::Zero(z.size(), z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) r(j, j) = c * z(j);
    return r;
  };
  return p;
}

// ---------------------------------------------------------------------------
// Running.

struct Artifact {
  std::string name;
  std::string body;
};

namespace detail {

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline const char* flag(bool b) { return b ? "true" : "false"; }

class Csv {
 public:
  explicit Csv(std::initializer_list<const char*> columns) {
    bool first = true;
    for (const char* c : columns) {
      out_ << (first ? "" : ",") << c;
      first = false;
    }
    out_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string cell(double x) { return fmt(x); }
  static std::string cell(int x) { return std::to_string(x); }
  static std::string cell(long long x) { return std::to_string(x); }
  static std::string cell(std::size_t x) { return std::to_string(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  std::ostringstream out_;
};

inline SemigroupMethod method_for(const std::string& name, Eigen::Index dim) {
  if (name == "dense") return DenseEigen{};
  if (name == "crank-nicolson") return CrankNicolson{};
  if (name == "krylov") return Krylov{};
  return dim <= 2000 ? SemigroupMethod{DenseEigen{}} : SemigroupMethod{Krylov{}};
}

}  // namespace detail

inline std::vector<Artifact> run_model_kernel(const ModelKernelConfig& c, std::uint64_t seed, const std::string& output) {
  using detail::Csv;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](Range r) { return r.lo + (r.hi - r.lo) * unit(rng); };
  const auto random_point = [&](int n, double radius) {
    CVector z(n);
    for (int j = 0; j < n; ++j) z(j) = Complex(radius * (2 * unit(rng) - 1), radius * (2 * unit(rng) - 1));
    return z;
  };
  const auto random_n = [&](int max_n) { return 1 + static_cast<int>(unit(rng) * max_n) % max_n; };

  if (c.check == "diagonal") {
    Csv csv({"case", "t", "q", "point", "row_J", "col_J", "re_value", "im_value"});
    for (std::size_t ci = 0; ci < c.cases.size(); ++ci) {
      const int n = static_cast<int>(c.cases[ci].size());
      for (int q : c.q) {
        const ModelSpec spec(n, c.cases[ci], q);
        const FormBasis basis(n, q);
        for (double t : c.t) {
          const auto emit = [&](std::size_t point, const CMatrix& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
              for (Eigen::Index j = 0; j < m.cols(); ++j)
                csv.row(ci, t, q, point, basis.label(static_cast<std::size_t>(i)), basis.label(static_cast<std::size_t>(j)),
                        m(i, j).real(), m(i, j).imag());
          };
          if (c.points.empty()) emit(0, model_diagonal(spec, t, c.measure).matrix);
          for (std::size_t p = 0; p < c.points.size(); ++p)
            emit(p, model_kernel(spec, t, c.points[p].first, c.points[p].second, c.reading, c.measure).value.matrix);
        }
      }
    }
    return {{output, csv.str()}};
  }

  if (c.check == "consistency") {
    Csv csv({"sample", "n", "q", "t", "max_rel_diff"});
    for (int s = 0; s < c.samples; ++s) {
      const int n = random_n(c.max_n);
      std::vector<double> lambda(static_cast<std::size_t>(n));
      for (auto& l : lambda) l = uniform(c.lambda_range);
      const int q = static_cast<int>(unit(rng) * (n + 1)) % (n + 1);
      const double t = uniform(c.t_range);
      const auto a = asymptotic_diagonal(CurvatureEndomorphism::diagonal(lambda), q, t).matrix;
      const auto b = model_diagonal(ModelSpec(n, lambda, q), t, c.measure).matrix;
      double worst = 0.0;
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
          const double scale = std::max(std::abs(b(i, j)), std::abs(a(i, j)));
          if (scale > 0.0) worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / scale);
        }
      csv.row(s, n, q, t, worst);
    }
    return {{output, csv.str()}};
  }

  if (c.check == "free-limit") {
    Csv csv({"sample", "n", "t", "re_value", "reference", "abs_diff"});
    for (int s = 0; s < c.samples; ++s) {
      const int n = random_n(c.max_n);
      const double t = uniform(c.t_range);
      const CVector z = random_point(n, c.point_radius), w = random_point(n, c.point_radius);
      const ModelSpec flat(n, std::vector<double>(static_cast<std::size_t>(n), 0.0), 0);
      const Complex v = mehler_scalar(flat, t, z, w, c.reading, c.measure);
      const double ref = std::pow(2 * pi * t, -n) * std::exp(-(z - w).squaredNorm() / (2 * t)) *
                         std::ldexp(measure_factor(n, c.measure), -n);
      csv.row(s, n, t, v.real(), ref, std::abs(v - ref));
    }
    return {{output, csv.str()}};
  }

  Csv csv({"sample", "n", "q", "t", "residual_symmetric", "residual_as_printed"});
  for (int s = 0; s < c.samples; ++s) {
    const int n = random_n(c.max_n);
    std::vector<double> lambda(static_cast<std::size_t>(n));
    for (auto& l : lambda) l = uniform(c.lambda_range);
    const int q = static_cast<int>(unit(rng) * (n + 1)) % (n + 1);
    const double t = uniform(c.t_range);
    const CVector z = random_point(n, c.point_radius), w = random_point(n, c.point_radius);
    const ModelSpec spec(n, lambda, q);
    csv.row(s, n, q, t, heat_equation_residual(spec, t, z, w, MehlerReading::symmetric),
            heat_equation_residual(spec, t, z, w, MehlerReading::as_printed));
  }
  return {{output, csv.str()}};
}

struct SpacingRow {
  double spacing = 0.0;
  int q = 0;
  double t = 0.0;
  std::string method;
  FiberEndomorphism value = FiberEndomorphism::zero(1, 0);
  FiberEndomorphism model = FiberEndomorphism::zero(1, 0);
  double max_error() const { return (value.matrix - model.matrix).cwiseAbs().maxCoeff(); }
};

struct SpectralRow {
  std::size_t operator_index = 0;
  int k = 0;
  double spacing = 0.0;
  int q = 0;
  int power = 0;
  double t = 0.0;
  SpectralBoundResult result;
};

struct ConvergeResult {
  ConvergenceReport report;    // k sweep
  ConvergenceReport baseline;  // zero perturbation on the same grid, when requested
  std::vector<SpacingRow> spacing_rows;
  std::vector<SpectralRow> spectral;
};

inline ConvergeResult run_converge(const ConvergeConfig& c, int threads = 1) {
  ConvergeResult out;
  std::vector<DiscreteOperator> ops;
  const bool keep = !c.bound_powers.empty();
  if (c.sweep == "k") {
    const WeightFunction weight(c.lambda, cubic_real_part(c.cubic));
    const PerturbationSpec pert = linear_metric(c.metric_linear);
    const GridPolicy policy{c.radius, c.spacing.front()};
    const GridSpec grid(weight.n(), policy.radius, policy.spacing, policy.site_cap);
    const std::size_t dim = grid.sites() * binomial(weight.n(), c.q.front());
    const SemigroupMethod method = detail::method_for(c.method, static_cast<Eigen::Index>(dim));
    for (int q : c.q) {
      auto r = converge_in_k(weight, pert, q, c.t, c.k, policy, method, threads, keep ? &ops : nullptr);
      for (auto& row : r.rows) out.report.rows.push_back(std::move(row));
      if (c.baseline) {
        auto b = converge_in_k(WeightFunction(c.lambda), {}, q, c.t, c.k, policy, method, threads);
        for (auto& row : b.rows) out.baseline.rows.push_back(std::move(row));
      }
    }
  } else {
    const int n = static_cast<int>(c.lambda.size());
    for (double h : c.spacing)
      for (int q : c.q) {
        const ModelSpec spec(n, c.lambda, q);
        DiscreteOperator op = assemble_model(spec, GridSpec::snapped(n, c.radius, h));
        const SemigroupMethod method = detail::method_for(c.method, op.dim());
        HeatPropagator prop(op.matrix, method);
        for (double t : c.t)
          out.spacing_rows.push_back(
              {h, q, t, method_name(method), kernel_diagonal(op, prop, op.grid.origin(), t), model_diagonal(spec, t)});
        if (keep) ops.push_back(std::move(op));
      }
  }
  std::vector<SpectralBoundQuery> queries;
  for (int N : c.bound_powers)
    for (double t : c.bound_times) queries.push_back({t, N});
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto results = spectral_bound_checks(ops[i], queries);
    for (std::size_t j = 0; j < queries.size(); ++j)
      out.spectral.push_back({i, ops[i].k, ops[i].grid.spacing(), ops[i].q, queries[j].power, queries[j].t, results[j]});
  }
  return out;
}

inline std::vector<Artifact> converge_artifacts(const ConvergeConfig& c, const ConvergeResult& r, const std::string& output) {
  using detail::Csv;
  std::vector<Artifact> files;
  if (c.sweep == "k") {
    std::ostringstream main;
    write_convergence_csv(main, r.report);
    files.push_back({output, main.str()});
    if (c.baseline) {
      std::ostringstream base;
      write_convergence_csv(base, r.baseline);
      files.push_back({"baseline.csv", base.str()});
    }
  } else {
    Csv csv({"h", "t", "q", "row_J", "col_J", "re_value", "im_value", "re_model", "im_model", "abs_err", "method"});
    for (const auto& row : r.spacing_rows) {
      const FormBasis basis(row.value.n, row.q);
      for (Eigen::Index i = 0; i < row.value.dim(); ++i)
        for (Eigen::Index j = 0; j < row.value.dim(); ++j) {
          const Complex v = row.value.matrix(i, j), m = row.model.matrix(i, j);
          csv.row(row.spacing, row.t, row.q, basis.label(static_cast<std::size_t>(i)), basis.label(static_cast<std::size_t>(j)),
                  v.real(), v.imag(), m.real(), m.imag(), std::abs(v - m), row.method);
        }
    }
    files.push_back({output, csv.str()});
  }
  if (!c.bound_powers.empty()) {
    Csv csv({"operator", "k", "h", "q", "N", "t", "max_value", "bound", "min_eigenvalue", "passed", "dense"});
    for (const auto& s : r.spectral)
      csv.row(s.operator_index, s.k, s.spacing, s.q, s.power, s.t, s.result.max_value, s.result.bound,
              s.result.min_eigenvalue, detail::flag(s.result.passed), detail::flag(s.result.dense));
    files.push_back({"spectral_bound.csv", csv.str()});
  }
  return files;
}

inline std::vector<Artifact> run_trace(const TraceConfig& c, std::uint64_t seed, const std::string& output) {
  const WeightFunction weight(c.lambda, cubic_real_part(c.cubic));
  const GridSpec grid = GridSpec::snapped(weight.n(), c.radius, c.spacing);
  const DiscreteOperator op = assemble_scaled(weight, linear_metric(c.metric_linear), c.k, grid, c.q);
  const SemigroupMethod method = detail::method_for(c.method, op.dim());
  detail::Csv csv({"t", "value", "standard_error", "probes", "method"});
  for (double t : c.t) {
    const auto e = heat_trace(op, t, method, seed, c.probes);
    csv.row(t, e.value, e.standard_error, e.probes, method_name(method));
  }
  return {{output, csv.str()}};
}

struct TraceComparison {
  int k = 0;
  int q = 0;
  double t = 0.0;
  double closed_form = 0.0;
  double truncated = 0.0;
  int cutoff = 0;
};

struct MorseResult {
  std::vector<MorseRecord> records;
  std::vector<TraceComparison> traces;
  std::vector<ProductMorseRecord> product;
};

inline MorseResult run_morse(const MorseConfig& c) {
  MorseResult out;
  const EllipticCurveBundle b(c.curve.tau, c.curve.degree);
  if (c.second_curve) {
    const EllipticCurveBundle b2(c.second_curve->tau, c.second_curve->degree);
    for (int k : c.k)
      for (int q : c.q)
        for (double t : c.t) {
          auto rec = product_torus_morse(b, b2, k, q, t, c.cells);
          if (c.modulation != 0.0) {
            const auto field = product_torus_curvature_field(b, b2, c.cells, c.modulation);
            rec.morse_integral = morse_bound(field, q).value;
            rec.morse_rhs = static_cast<double>(k) * k * rec.morse_integral;
            rec.morse_holds = rec.traces.lhs <= rec.morse_rhs + 1e-9 * std::max(1.0, std::abs(rec.morse_rhs));
          }
          out.product.push_back(rec);
        }
    return out;
  }
  for (int k : c.k)
    for (int q : c.q)
      for (double t : c.t) {
        out.records.push_back(morse_trace_inequality(b, k, q, t));
        const int M = trace_cutoff(b, t);
        out.traces.push_back({k, q, t, heat_trace_exact(b, k, q, t), heat_trace_truncated(b, k, q, t, M), M});
      }
  return out;
}

inline std::vector<Artifact> morse_artifacts(const MorseResult& r, const std::string& output) {
  using detail::Csv;
  if (!r.product.empty()) {
    Csv csv({"k", "q", "t", "h0", "h1", "h2", "lhs", "rhs", "gap", "trace_holds", "morse_integral", "morse_rhs",
             "morse_holds"});
    for (const auto& p : r.product)
      csv.row(p.k, p.q, p.t, p.h[0], p.h[1], p.h[2], p.traces.lhs, p.traces.rhs, p.traces.gap,
              detail::flag(p.traces.holds), p.morse_integral, p.morse_rhs, detail::flag(p.morse_holds));
    return {{output, csv.str()}};
  }
  std::ostringstream morse;
  write_morse_csv(morse, r.records);
  Csv traces({"k", "q", "t", "closed_form", "truncated", "cutoff", "abs_diff"});
  for (const auto& x : r.traces)
    traces.row(x.k, x.q, x.t, x.closed_form, x.truncated, x.cutoff, std::abs(x.closed_form - x.truncated));
  return {{output, morse.str()}, {"traces.csv", traces.str()}};
}

inline std::vector<Artifact> run_spectrum(const SpectrumConfig& c, const std::string& output) {
  const EllipticCurveBundle b(c.curve.tau, c.curve.degree);
  const auto table = landau_spectrum(b, c.k, c.q, c.levels);
  table.validate();
  detail::Csv csv({"level", "eigenvalue", "multiplicity"});
  for (std::size_t m = 0; m < table.levels.size(); ++m)
    csv.row(m, table.levels[m].eigenvalue, table.levels[m].multiplicity);
  return {{output, csv.str()}};
}

struct OracleRun {
  OracleCase params;
  TorusOracle oracle;
  std::vector<double> table;  // expanded Landau eigenvalues
  long long expected_ground = 0;
};

inline std::vector<OracleRun> run_oracle(const OracleConfig& c) {
  std::vector<OracleRun> out;
  for (const auto& oc : c.cases) {
    const EllipticCurveBundle b(c.tau, oc.degree);
    OracleRun r{oc, torus_landau_oracle(b, oc.k, oc.q, c.count, c.points), {}, 0};
    const auto table = landau_spectrum(b, oc.k, oc.q, c.count + 1);
    for (const auto& l : table.levels)
      for (long long m = 0; m < l.multiplicity && static_cast<int>(r.table.size()) < c.count; ++m)
        r.table.push_back(l.eigenvalue);
    const auto dims = riemann_roch(b, oc.k);
    r.expected_ground = oc.q == 0 ? dims.h0 : dims.h1;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<Artifact> oracle_artifacts(const std::vector<OracleRun>& runs, const std::string& output) {
  using detail::Csv;
  Csv eig({"case", "k", "degree", "q", "index", "coarse", "fine", "extrapolated", "exact", "abs_err", "error_estimate",
           "within"});
  Csv mult({"case", "k", "degree", "q", "ground_multiplicity", "riemann_roch", "match"});
  for (std::size_t c = 0; c < runs.size(); ++c) {
    const auto& r = runs[c];
    for (std::size_t i = 0; i < r.table.size(); ++i) {
      const double err = std::abs(r.oracle.extrapolated[i] - r.table[i]);
      eig.row(c, r.params.k, r.params.degree, r.params.q, i, r.oracle.coarse[i], r.oracle.fine[i], r.oracle.extrapolated[i],
              r.table[i], err, r.oracle.error_estimate[i], detail::flag(err <= r.oracle.error_estimate[i]));
    }
    mult.row(c, r.params.k, r.params.degree, r.params.q, r.oracle.ground_multiplicity, r.expected_ground,
             detail::flag(r.oracle.ground_multiplicity == r.expected_ground));
  }
  return {{output, eig.str()}, {"multiplicity.csv", mult.str()}};
}

/// Runs one experiment and returns its CSV outputs; the manifest is separate.
inline std::vector<Artifact> run(const ExperimentConfig& cfg, int threads = 1) {
  return std::visit(
      [&](const auto& c) -> std::vector<Artifact> {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, ModelKernelConfig>) return run_model_kernel(c, cfg.seed, cfg.output);
        else if constexpr (std::is_same_v<C, ConvergeConfig>) return converge_artifacts(c, run_converge(c, threads), cfg.output);
        else if constexpr (std::is_same_v<C, TraceConfig>) return run_trace(c, cfg.seed, cfg.output);
        else if constexpr (std::is_same_v<C, MorseConfig>) return morse_artifacts(run_morse(c), cfg.output);
        else if constexpr (std::is_same_v<C, SpectrumConfig>) return run_spectrum(c, cfg.output);
        else return oracle_artifacts(run_oracle(c), cfg.output);
      },
      cfg.body);
}

inline json manifest(const ExperimentConfig& cfg, const std::vector<Artifact>& files, double wall_seconds, int threads) {
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  json outputs = json::array();
  for (const auto& f : files) outputs.push_back(f.name);
  return json{{"config_hash", hash},   {"experiment", cfg.kind},       {"seed", cfg.seed},
              {"tool_version", tool_version}, {"wall_time_seconds", wall_seconds}, {"threads", threads},
              {"outputs", outputs},    {"config", cfg.normalized}};
}

/// Writes every artifact plus manifest.json into `dir`.
inline void write_outputs(const std::filesystem::path& dir, const std::vector<Artifact>& files, const json& manifest_json) {
  std::filesystem::create_directories(dir);
  for (const auto& f : files) {
    std::ofstream out(dir / f.name, std::ios::binary);
    out << f.body;
    if (!out) throw std::runtime_error("cannot write " + (dir / f.name).string());
  }
  std::ofstream m(dir / "manifest.json", std::ios::binary);
  m << manifest_json.dump(2) << '\n';
  if (!m) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

}  // namespace kodaira::experiment
