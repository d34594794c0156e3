#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/corner_analysis.hpp"
#include "corner_ma/error.hpp"
#include "corner_ma/examples3d.hpp"
#include "corner_ma/expansion.hpp"
#include "corner_ma/ledger.hpp"
#include "corner_ma/ma_solver.hpp"
#include "corner_ma/ode_bvp.hpp"

namespace corner_ma {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

/// Reads keys of a JSON object and rejects whatever was not consumed.
class KeyReader {
 public:
  KeyReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw InvalidArgument(where_ + ": expected a JSON object");
  }
  bool has(const std::string& k) const { return j_.contains(k); }
  template <class T>
  T get(const std::string& k, T fallback) {
    used_.insert(k);
    if (!j_.contains(k)) return fallback;
    return as<T>(k);
  }
  template <class T>
  T require(const std::string& k) {
    used_.insert(k);
    if (!j_.contains(k)) throw InvalidArgument(where_ + ": missing key '" + k + "'");
    return as<T>(k);
  }
  const json& sub(const std::string& k) {
    used_.insert(k);
    return j_.at(k);
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key()))
        throw InvalidArgument(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  template <class T>
  T as(const std::string& k) const {
    try {
      return j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw InvalidArgument(where_ + ": key '" + k + "' has the wrong type");
    }
  }
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline void check_range(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument("config: " + what);
}

inline json window_json(StripWindow w) { return json::array({w.t0, w.t1}); }

inline StripWindow read_window(KeyReader& r, const std::string& key, StripWindow fallback) {
  if (!r.has(key)) {
    r.get<json>(key, json());
    return fallback;
  }
  const auto v = r.require<std::vector<double>>(key);
  check_range(v.size() == 2 && v[0] >= 0.0 && v[1] > v[0], key + " must be [t0, t1] with 0 <= t0 < t1");
  return {v[0], v[1]};
}

}  // namespace detail

/// mu as a float or as an exact fraction p/q.
struct ConeSpec {
  std::optional<double> mu;
  std::optional<std::pair<long, long>> rational;

  ConeGeometry cone() const {
    if (rational) return ConeGeometry::from_rational(rational->first, rational->second);
    return ConeGeometry::from_float(*mu);
  }
  static ConeSpec read(detail::KeyReader& r) {
    ConeSpec s;
    if (r.has("mu_rational")) {
      const auto v = r.require<std::vector<long>>("mu_rational");
      detail::check_range(v.size() == 2 && v[0] > 0 && v[1] > v[0], "mu_rational must be [p, q] with 0 < p < q");
      s.rational = std::make_pair(v[0], v[1]);
      r.get<json>("mu", json());
      if (r.has("mu")) throw InvalidArgument("config: give either mu or mu_rational, not both");
    } else {
      s.mu = r.require<double>("mu");
      detail::check_range(*s.mu > 0.0 && *s.mu < 1.0, "mu must lie in (0,1)");
    }
    return s;
  }
  void write(json& j) const {
    if (rational)
      j["mu_rational"] = {rational->first, rational->second};
    else
      j["mu"] = *mu;
  }
};

struct LedgerParams {
  ConeSpec cone;
  double cutoff = 0.0;
};

struct SolveParams {
  std::string domain = "rectangle";  // or "parallelogram"
  double a = 1.0, b = 1.0;
  std::array<std::array<double, 2>, 2> matrix{{{1.0, 0.0}, {0.0, 1.0}}};
  double c = 1.0;
  std::string boundary = "half_norm_squared";  // or "model_plus"
  std::size_t grid = 129;
  Grading grading;
  double tol = 1e-10;
  int max_iters = 50;
};

struct AnalyzeParams {
  std::string strip_csv;
  ConeSpec cone;
  StripWindow window{1.5, 3.5};
  double noise_floor = kNoiseFloor;
  double cutoff = 0.0;  // ledger cutoff, default 3/mu
};

struct PipelineParams {
  double c = 0.0;
  std::optional<std::pair<long, long>> mu_rational;
  std::size_t grid = 513;
  Grading grading{1.01, 4.0};
  double tol = 1e-9;
  int max_iters = 50;
  StripWindow window{1.5, 3.5};
  StripWindow refine_window{3.0, 5.0};
  StripWindow residual_window{1.5, 3.5};
  double cutoff = 9.5;
  std::size_t nt_per_unit = 20;
  std::size_t ntheta = 129;
  bool coarse_noise = true;
  double max_gap = 0.10;
  double slope_tolerance = 0.20;
  double slope_margin = 0.5;
};

struct ExpansionCheckParams {
  ConeSpec cone;
  double c1 = 0.0;
  double target = 0.0;
  std::vector<std::pair<double, double>> free_coefficients;
  double lambda = 2.0;
  std::size_t nodes = kDefaultThetaNodes;
  double residual_tol = 1e-8;
};

struct Verify3dParams {
  std::vector<double> f_values{0.75, 1.0, 0.96};
  std::size_t points = 100;
  double step = 1e-3;
};

enum class Scenario { Ledger, Solve, Analyze, CornerPipeline, ExpansionCheck, Verify3d };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::Ledger: return "ledger";
    case Scenario::Solve: return "solve";
    case Scenario::Analyze: return "analyze";
    case Scenario::CornerPipeline: return "corner_pipeline";
    case Scenario::ExpansionCheck: return "expansion_check";
    case Scenario::Verify3d: return "verify3d";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  for (auto v : {Scenario::Ledger, Scenario::Solve, Scenario::Analyze, Scenario::CornerPipeline,
                 Scenario::ExpansionCheck, Scenario::Verify3d})
    if (s == to_string(v)) return v;
  throw InvalidArgument("config: unknown scenario '" + s + "'");
}

struct ScenarioConfig {
  Scenario scenario = Scenario::Ledger;
  std::variant<LedgerParams, SolveParams, AnalyzeParams, PipelineParams, ExpansionCheckParams,
               Verify3dParams>
      parameters;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
};

namespace detail {

inline Grading read_grading(KeyReader& r, Grading fallback) {
  if (!r.has("grading")) {
    r.get<json>("grading", json());
    return fallback;
  }
  KeyReader g(r.sub("grading"), "grading");
  Grading out;
  out.ratio = g.get<double>("ratio", 1.0);
  out.max_refinement = g.get<double>("max_refinement", 1.0);
  g.finish();
  check_range(out.ratio >= 1.0 && out.ratio <= 1.05, "grading ratio must lie in [1, 1.05]");
  check_range(out.max_refinement >= 1.0, "grading max_refinement must be >= 1");
  return out;
}

inline json grading_json(const Grading& g) {
  return {{"ratio", g.ratio}, {"max_refinement", g.max_refinement}};
}

inline LedgerParams read_ledger(const json& j) {
  KeyReader r(j, "parameters");
  LedgerParams p;
  p.cone = ConeSpec::read(r);
  p.cutoff = r.require<double>("cutoff");
  r.finish();
  check_range(p.cutoff > p.cone.cone().leading_exponent(), "cutoff must exceed 1/mu (empty ledger)");
  return p;
}

inline SolveParams read_solve(const json& j) {
  KeyReader r(j, "parameters");
  SolveParams p;
  p.domain = r.get<std::string>("domain", p.domain);
  check_range(p.domain == "rectangle" || p.domain == "parallelogram",
              "domain must be 'rectangle' or 'parallelogram'");
  p.a = r.get<double>("a", 1.0);
  p.b = r.get<double>("b", 1.0);
  if (p.domain == "parallelogram") {
    const auto m = r.require<std::vector<std::vector<double>>>("matrix");
    check_range(m.size() == 2 && m[0].size() == 2 && m[1].size() == 2, "matrix must be 2x2");
    p.matrix = {{{m[0][0], m[0][1]}, {m[1][0], m[1][1]}}};
    check_range(m[0][0] * m[1][1] - m[0][1] * m[1][0] != 0.0, "matrix must be invertible");
  }
  p.c = r.require<double>("c");
  p.boundary = r.get<std::string>("boundary", p.boundary);
  check_range(p.boundary == "half_norm_squared" || p.boundary == "model_plus",
              "boundary must be 'half_norm_squared' or 'model_plus'");
  p.grid = r.get<std::size_t>("grid", p.grid);
  p.grading = read_grading(r, Grading{});
  p.tol = r.get<double>("tol", p.tol);
  p.max_iters = r.get<int>("max_iters", p.max_iters);
  r.finish();
  check_range(p.a > 0 && p.b > 0, "rectangle sides must be positive");
  check_range(p.c > 0.0, "c must be positive");
  check_range(p.boundary != "model_plus" || p.c < 1.0, "model_plus boundary needs c < 1");
  check_range(p.grid >= 17, "grid must be >= 17");
  check_range(p.tol > 0.0 && p.max_iters > 0, "tol and max_iters must be positive");
  return p;
}

inline AnalyzeParams read_analyze(const json& j) {
  KeyReader r(j, "parameters");
  AnalyzeParams p;
  p.strip_csv = r.require<std::string>("strip_csv");
  p.cone = ConeSpec::read(r);
  p.window = read_window(r, "window", p.window);
  p.noise_floor = r.get<double>("noise_floor", p.noise_floor);
  p.cutoff = r.get<double>("cutoff", 3.0 * p.cone.cone().leading_exponent());
  r.finish();
  check_range(p.window.length() >= 1.0, "window length must be >= 1");
  check_range(p.noise_floor >= 0.0, "noise_floor must be nonnegative");
  check_range(p.cutoff > p.cone.cone().leading_exponent(), "cutoff must exceed 1/mu");
  return p;
}

inline PipelineParams read_pipeline(const json& j) {
  KeyReader r(j, "parameters");
  PipelineParams p;
  p.c = r.require<double>("c");
  check_range(p.c > 0.0 && p.c < 1.0, "c must lie in (0,1)");
  if (r.has("mu_rational")) {
    const auto v = r.require<std::vector<long>>("mu_rational");
    check_range(v.size() == 2 && v[0] > 0 && v[1] > v[0], "mu_rational must be [p, q]");
    p.mu_rational = std::make_pair(v[0], v[1]);
  } else {
    r.get<json>("mu_rational", json());
  }
  p.grid = r.get<std::size_t>("grid", p.grid);
  p.grading = read_grading(r, p.grading);
  p.tol = r.get<double>("tol", p.tol);
  p.max_iters = r.get<int>("max_iters", p.max_iters);
  p.window = read_window(r, "window", p.window);
  p.refine_window = read_window(r, "refine_window", p.refine_window);
  p.residual_window = read_window(r, "residual_window", p.residual_window);
  p.cutoff = r.get<double>("cutoff", p.cutoff);
  p.nt_per_unit = r.get<std::size_t>("nt_per_unit", p.nt_per_unit);
  p.ntheta = r.get<std::size_t>("ntheta", p.ntheta);
  p.coarse_noise = r.get<bool>("coarse_noise", p.coarse_noise);
  if (r.has("thresholds")) {
    KeyReader t(r.sub("thresholds"), "thresholds");
    p.max_gap = t.get<double>("max_gap", p.max_gap);
    p.slope_tolerance = t.get<double>("slope_tolerance", p.slope_tolerance);
    p.slope_margin = t.get<double>("slope_margin", p.slope_margin);
    t.finish();
  } else {
    r.get<json>("thresholds", json());
  }
  r.finish();
  check_range(p.grid >= 17 && p.grid % 2 == 1, "grid must be odd and >= 17");
  check_range(p.tol > 0.0 && p.max_iters > 0, "tol and max_iters must be positive");
  for (auto w : {p.window, p.refine_window, p.residual_window})
    check_range(w.length() >= 1.0, "fit windows must have length >= 1");
  check_range(p.nt_per_unit >= 2 && p.ntheta >= 3, "strip resolution too small");
  check_range(p.max_gap > 0 && p.slope_tolerance > 0, "thresholds must be positive");
  const auto nz = affine_normalizer(p.c);
  if (p.mu_rational) {
    const double q = static_cast<double>(p.mu_rational->first) / p.mu_rational->second;
    check_range(std::abs(q - nz.cone.mu()) < 1e-12, "mu_rational does not match the cone of c");
  }
  check_range(nz.cone.regime() == Regime::Sharp, "c must give a sharp cone");
  check_range(p.cutoff > 2.0 / nz.cone.mu() - 2.0, "cutoff must include the second exponent");
  return p;
}

inline ExpansionCheckParams read_expansion_check(const json& j) {
  KeyReader r(j, "parameters");
  ExpansionCheckParams p;
  p.cone = ConeSpec::read(r);
  p.c1 = r.require<double>("c1");
  const ConeGeometry cone = p.cone.cone();
  p.target = r.get<double>("target", cone.regime() == Regime::Sharp ? 2.0 / cone.mu() - 2.0
                                                                     : 3.0 / cone.mu());
  if (r.has("free_coefficients")) {
    for (const auto& e : r.sub("free_coefficients")) {
      KeyReader fr(e, "free_coefficients entry");
      const double ex = fr.require<double>("exponent");
      const double v = fr.require<double>("value");
      fr.finish();
      p.free_coefficients.emplace_back(ex, v);
    }
  } else {
    r.get<json>("free_coefficients", json());
  }
  p.lambda = r.get<double>("lambda", p.lambda);
  p.nodes = r.get<std::size_t>("nodes", p.nodes);
  p.residual_tol = r.get<double>("residual_tol", p.residual_tol);
  r.finish();
  check_range(p.target > cone.leading_exponent(), "target must exceed 1/mu");
  check_range(p.nodes >= 8, "nodes must be >= 8");
  check_range(p.lambda != 0.0, "lambda must be nonzero");
  return p;
}

inline Verify3dParams read_verify3d(const json& j) {
  KeyReader r(j, "parameters");
  Verify3dParams p;
  p.f_values = r.get<std::vector<double>>("f_values", p.f_values);
  p.points = r.get<std::size_t>("points", p.points);
  p.step = r.get<double>("step", p.step);
  r.finish();
  for (double f : p.f_values) check_range(f > 0.0 && f <= 1.0, "f_values must lie in (0,1]");
  check_range(p.points >= 1, "points must be >= 1");
  check_range(p.step > 0.0 && p.step < 0.05, "step must lie in (0, 0.05)");
  return p;
}

}  // namespace detail

inline ScenarioConfig config_from_json(const json& j) {
  detail::KeyReader r(j, "config");
  const int version = r.require<int>("schema_version");
  if (version != kConfigSchemaVersion)
    throw InvalidArgument("config: unsupported schema_version " + std::to_string(version));
  ScenarioConfig c;
  c.scenario = scenario_from_string(r.require<std::string>("scenario"));
  c.output_dir = r.get<std::string>("output_dir", c.output_dir);
  c.seed = r.get<std::uint64_t>("seed", 0);
  const json params = r.has("parameters") ? r.sub("parameters") : json::object();
  r.finish();
  switch (c.scenario) {
    case Scenario::Ledger: c.parameters = detail::read_ledger(params); break;
    case Scenario::Solve: c.parameters = detail::read_solve(params); break;
    case Scenario::Analyze: c.parameters = detail::read_analyze(params); break;
    case Scenario::CornerPipeline: c.parameters = detail::read_pipeline(params); break;
    case Scenario::ExpansionCheck: c.parameters = detail::read_expansion_check(params); break;
    case Scenario::Verify3d: c.parameters = detail::read_verify3d(params); break;
  }
  return c;
}

inline json to_json(const ScenarioConfig& c) {
  json p;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LedgerParams>) {
          v.cone.write(p);
          p["cutoff"] = v.cutoff;
        } else if constexpr (std::is_same_v<T, SolveParams>) {
          p["domain"] = v.domain;
          p["a"] = v.a;
          p["b"] = v.b;
          if (v.domain == "parallelogram")
            p["matrix"] = {{v.matrix[0][0], v.matrix[0][1]}, {v.matrix[1][0], v.matrix[1][1]}};
          p["c"] = v.c;
          p["boundary"] = v.boundary;
          p["grid"] = v.grid;
          p["grading"] = detail::grading_json(v.grading);
          p["tol"] = v.tol;
          p["max_iters"] = v.max_iters;
        } else if constexpr (std::is_same_v<T, AnalyzeParams>) {
          p["strip_csv"] = v.strip_csv;
          v.cone.write(p);
          p["window"] = detail::window_json(v.window);
          p["noise_floor"] = v.noise_floor;
          p["cutoff"] = v.cutoff;
        } else if constexpr (std::is_same_v<T, PipelineParams>) {
          p["c"] = v.c;
          if (v.mu_rational) p["mu_rational"] = {v.mu_rational->first, v.mu_rational->second};
          p["grid"] = v.grid;
          p["grading"] = detail::grading_json(v.grading);
          p["tol"] = v.tol;
          p["max_iters"] = v.max_iters;
          p["window"] = detail::window_json(v.window);
          p["refine_window"] = detail::window_json(v.refine_window);
          p["residual_window"] = detail::window_json(v.residual_window);
          p["cutoff"] = v.cutoff;
          p["nt_per_unit"] = v.nt_per_unit;
          p["ntheta"] = v.ntheta;
          p["coarse_noise"] = v.coarse_noise;
          p["thresholds"] = {{"max_gap", v.max_gap},
                             {"slope_tolerance", v.slope_tolerance},
                             {"slope_margin", v.slope_margin}};
        } else if constexpr (std::is_same_v<T, ExpansionCheckParams>) {
          v.cone.write(p);
          p["c1"] = v.c1;
          p["target"] = v.target;
          p["free_coefficients"] = json::array();
          for (const auto& [e, val] : v.free_coefficients)
            p["free_coefficients"].push_back({{"exponent", e}, {"value", val}});
          p["lambda"] = v.lambda;
          p["nodes"] = v.nodes;
          p["residual_tol"] = v.residual_tol;
        } else {
          p["f_values"] = v.f_values;
          p["points"] = v.points;
          p["step"] = v.step;
        }
      },
      c.parameters);
  return {{"schema_version", kConfigSchemaVersion},
          {"scenario", to_string(c.scenario)},
          {"output_dir", c.output_dir},
          {"seed", c.seed},
          {"parameters", p}};
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
  return os.str();
}

/// Output directory that records every file it writes for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }
  const std::filesystem::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    out << content;
    files_[name] = sha256_hex(content);
  }
  template <class F>
  void write_with(const std::string& name, F&& f) {
    std::ostringstream os;
    f(os);
    write(name, os.str());
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void write_manifest(const std::string& scenario, const std::string& status,
                      const std::optional<std::string>& failed_stage,
                      const std::optional<std::string>& message) {
    json m;
    m["scenario"] = scenario;
    m["status"] = status;
    m["failed_stage"] = failed_stage ? json(*failed_stage) : json(nullptr);
    if (message) m["message"] = *message;
    m["files"] = json::array();
    for (const auto& [name, digest] : files_) m["files"].push_back({{"path", name}, {"sha256", digest}});
    std::ofstream out(dir_ / "MANIFEST.json", std::ios::binary);
    out << m.dump(2) << "\n";
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> files_;
};

// ---------------------------------------------------------------------------
// Scenarios

enum class RunStatus { Pass = 0, Error = 1, ThresholdFailure = 2 };

struct RunResult {
  RunStatus status = RunStatus::Pass;
  json summary;
  std::optional<std::string> failed_stage;
  std::string message;
  int exit_code() const { return static_cast<int>(status); }
};

/// Exception tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline json check(bool pass, json value, json threshold) {
  return {{"pass", pass}, {"value", std::move(value)}, {"threshold", std::move(threshold)}};
}

inline bool all_pass(const json& checks) {
  for (const auto& [k, v] : checks.items())
    if (!v.at("pass").get<bool>()) return false;
  return true;
}

inline json ledger_json(const ExponentLedger& l) {
  json a = json::array();
  for (const auto& e : l.entries()) {
    json w = json::array();
    for (const auto& x : e.in_i2) w.push_back({x.i, x.j});
    a.push_back({{"position", e.position},
                 {"value", e.value},
                 {"lattice", {e.lattice.k, e.lattice.m}},
                 {"i1", e.in_i1 ? json(*e.in_i1) : json(nullptr)},
                 {"i2", w},
                 {"resonant", e.resonant},
                 {"max_log_power", e.max_log_power},
                 {"coefficient_forced_zero", e.coefficient_forced_zero}});
  }
  return a;
}

inline RunResult run_ledger(const LedgerParams& p, ArtifactWriter& out) {
  const ExponentLedger l = stage("ledger", [&] { return build_ledger(p.cone.cone(), p.cutoff); });
  out.write_with("ledger.txt", [&](std::ostream& os) { l.write_table(os); });
  out.write_with("ledger.csv", [&](std::ostream& os) { l.write_csv(os); });
  RunResult r;
  r.summary = {{"entries", ledger_json(l)}};
  if (l.cone().regime() == Regime::Sharp) {
    const auto h = holder_label(l.cone());
    r.summary["holder"] = {{"k", h.k}, {"alpha", h.alpha}, {"integer_warning", h.integer_warning}};
  }
  return r;
}

inline Quadratic boundary_quadratic(const std::string& name, double c) {
  return name == "model_plus" ? Quadratic::model_plus(c) : Quadratic::half_norm_squared();
}

inline RunResult run_solve(const SolveParams& p, ArtifactWriter& out) {
  ProblemSpec spec;
  spec.a = p.a;
  spec.b = p.b;
  if (p.domain == "parallelogram") spec.map = AffineMap2(p.matrix);
  spec.f = p.c;
  spec.n = p.grid;
  spec.grading = p.grading;
  spec.quadratic_boundary(boundary_quadratic(p.boundary, p.c));
  MASolution sol;
  RunResult r;
  try {
    sol = MongeAmpereSolver(spec).solve(p.tol, p.max_iters);
  } catch (const ConvergenceError& e) {
    throw StageError("solve", std::string(e.what()));
  }
  out.write_with("solution.csv", [&](std::ostream& os) { sol.write_csv(os); });
  out.write_with("convergence.csv", [&](std::ostream& os) { sol.write_log_csv(os); });
  json checks;
  checks["converged"] = check(sol.converged, sol.residual_sup, p.tol);
  checks["convex_certificate"] = check(sol.convex_certificate, sol.convex_certificate, true);
  r.summary = {{"residual_sup", sol.residual_sup},
               {"newton_iters", sol.newton_iters},
               {"convex_certificate", sol.convex_certificate},
               {"checks", checks}};
  if (!all_pass(checks)) r.status = RunStatus::ThresholdFailure;
  return r;
}

inline RunResult run_analyze(const AnalyzeParams& p, ArtifactWriter& out) {
  const ConeGeometry cone = p.cone.cone();
  const StripField field = stage("load", [&] {
    std::ifstream in(p.strip_csv);
    if (!in) throw InvalidArgument("cannot open " + p.strip_csv);
    return StripField::read_csv(in, cone);
  });
  const ExponentLedger ledger = build_ledger(cone, p.cutoff);
  const FitReport fit = stage("fit_leading", [&] { return fit_leading(field, ledger, p.window, p.noise_floor); });
  const auto m1 = mode_projection(field, 1);
  out.write_with("mode1.csv", [&](std::ostream& os) { m1.write_csv(os); });
  out.write_json("fit_report.json", to_json(fit));
  out.write_with("fit.gp", [&](std::ostream& os) { write_fit_gnuplot(os, fit, "mode1.csv", "fit.png"); });
  RunResult r;
  r.summary = {{"fit", to_json(fit)}};
  return r;
}

// v(y) = u(A y) - |y|^2/2 on the normalized cone, from the square solve.
inline CartesianSampler corner_sampler(const MASolution& sol, const AffineMap2& a,
                                       std::shared_ptr<const GridField> field) {
  return [&sol, a, field](double x, double y) {
    const Point2 p = sol.to_reference(a.apply({x, y}));
    if (!field->covers(p.x, p.y)) throw CoverageError("sample outside the solved domain");
    return sol.reference_ref(p.x, p.y) + (*field)(p.x, p.y) - 0.5 * (x * x + y * y);
  };
}

inline RunResult run_pipeline(const PipelineParams& p, ArtifactWriter& out) {
  RunResult r;
  const AffineNormalization nz = affine_normalizer(p.c);
  const ConeGeometry cone =
      p.mu_rational ? ConeGeometry::from_rational(p.mu_rational->first, p.mu_rational->second)
                    : nz.cone;
  const ExponentLedger ledger = stage("ledger", [&] { return build_ledger(cone, p.cutoff); });

  auto solve = [&](std::size_t n) {
    ProblemSpec spec;
    spec.f = p.c;
    spec.n = n;
    spec.grading = p.grading;
    spec.boundary = [](double x, double y) { return 0.5 * (x * x + y * y); };
    spec.reference = Quadratic::model_plus(p.c);
    return MongeAmpereSolver(spec).solve(p.tol, p.max_iters);
  };
  const MASolution sol = stage("solve", [&] { return solve(p.grid); });
  out.write_with("convergence.csv", [&](std::ostream& os) { sol.write_log_csv(os); });

  // Sandwich |x|^2/2 < u < P_c^+ at interior nodes.
  double lower = std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < sol.grid.nx(); ++i)
    for (std::size_t j = 1; j + 1 < sol.grid.ny(); ++j) {
      const double x = sol.grid.x[i], y = sol.grid.y[j];
      lower = std::min(lower, sol.u(i, j) - 0.5 * (x * x + y * y));
      upper = std::min(upper, model_quadratic(p.c, x, y) - sol.u(i, j));
    }

  const double t_lo = std::min({p.window.t0, p.refine_window.t0, p.residual_window.t0});
  const double t_hi = std::max({p.window.t1, p.refine_window.t1, p.residual_window.t1});
  const StripWindow span{t_lo, t_hi};
  const auto nt = static_cast<std::size_t>(std::lround(span.length() * p.nt_per_unit)) + 1;
  auto strip_of = [&](const MASolution& s) {
    auto field = std::make_shared<const GridField>(s.correction_field());
    return to_strip(corner_sampler(s, nz.map, field), cone, span, nt, p.ntheta);
  };
  const StripField strip = stage("to_strip", [&] { return strip_of(sol); });
  out.write_with("strip.csv", [&](std::ostream& os) { strip.write_csv(os); });

  const FitReport fit = stage("fit_leading", [&] { return fit_leading(strip, ledger, p.window); });
  out.write_json("fit_report.json", to_json(fit));
  const auto m1 = mode_projection(strip, 1);
  out.write_with("mode1.csv", [&](std::ostream& os) { m1.write_csv(os); });
  out.write_with("fit.gp", [&](std::ostream& os) { write_fit_gnuplot(os, fit, "mode1.csv", "fit.png"); });

  // c1 with the exponent held at 1/mu, matched against the forced expansion.
  const LeadingRefinement refined = stage("extend", [&] {
    return refine_leading(strip, ledger, p.refine_window, fit.amplitude_hat, p.cutoff);
  });
  out.write_json("expansion.json", to_json(refined.expansion));

  // Discretization noise: distance to the half-resolution solve.
  double noise = kNoiseFloor;
  if (p.coarse_noise) {
    const MASolution coarse = stage("noise_estimate", [&] { return solve((p.grid - 1) / 2 + 1); });
    const StripField cs = stage("noise_estimate", [&] { return strip_of(coarse); });
    const auto diff = detail::restrict(sup_over_theta(strip - cs), p.residual_window);
    for (double v : diff.value) noise = std::max(noise, v);
  }

  const Expansion lead = Expansion::leading(ledger, refined.c1);
  const CascadeReport lead_cascade = stage("residual_cascade", [&] {
    return residual_cascade(strip, lead, p.residual_window, noise);
  });
  const CascadeReport cascade = stage("residual_cascade", [&] {
    return residual_cascade(strip, refined.expansion, p.residual_window, noise, 3);
  });
  out.write_with("residual.csv", [&](std::ostream& os) {
    const auto res = sup_over_theta(strip - evaluate(lead, strip.window(), strip.nt(), strip.ntheta()));
    res.write_csv(os);
  });

  const BarrierReport barrier = stage("barrier_check", [&] {
    // Largest admissible epsilon from the closed form, then verify at half of it.
    const auto probe = barrier_check(strip, 0.0, p.window);
    return barrier_check(strip, 0.5 * probe.epsilon_max, p.window);
  });

  const double mu1 = ledger[0].value;
  const double mu2 = ledger.next_after(mu1)->value;
  json checks;
  checks["exponent_gap"] = check(fit.relative_gap < p.max_gap, fit.relative_gap, p.max_gap);
  checks["c10_sign"] = check(fit.c10_sign == Sign::Negative, to_string(fit.c10_sign), "negative");
  const auto holder = holder_label(cone);
  checks["holder"] = check(true, {holder.k, holder.alpha}, nullptr);
  checks["sandwich_lower"] = check(lower > -1e-10, lower, -1e-10);
  checks["sandwich_upper"] = check(upper > -1e-10, upper, -1e-10);
  checks["convex_certificate"] = check(sol.convex_certificate, sol.convex_certificate, true);
  const CascadeStage& s1 = lead_cascade.stages.front();
  json second;
  if (s1.floor) {
    // Degraded form: only the lower bound can be checked.
    second = check(false, "floor", mu1 + p.slope_margin);
    second["degraded"] = true;
  } else {
    const bool above = s1.slope >= mu1 + p.slope_margin;
    const bool near = std::abs(s1.slope - mu2) <= p.slope_tolerance * mu2;
    second = check(above && near, s1.slope, {{"min", mu1 + p.slope_margin}, {"target", mu2},
                                             {"relative_tolerance", p.slope_tolerance}});
    second["degraded"] = false;
  }
  checks["second_order_slope"] = second;
  checks["barrier"] = check(barrier.pass && barrier.epsilon > 0.0, barrier.epsilon, "> 0");

  r.summary = {{"mu", cone.mu()},
               {"predicted_exponent", mu1},
               {"second_exponent", mu2},
               {"solver",
                {{"grid", p.grid},
                 {"residual_sup", sol.residual_sup},
                 {"newton_iters", sol.newton_iters},
                 {"convex_certificate", sol.convex_certificate}}},
               {"sandwich", {{"min_u_minus_lower", lower}, {"min_upper_minus_u", upper}}},
               {"fit", to_json(fit)},
               {"refined_c1", refined.c1},
               {"refine_relative_rms", refined.relative_rms},
               {"noise_floor", noise},
               {"leading_residual", to_json(lead_cascade)},
               {"cascade", to_json(cascade)},
               {"barrier", to_json(barrier)},
               {"checks", checks}};
  if (!all_pass(checks)) r.status = RunStatus::ThresholdFailure;
  return r;
}

/// Closed-form mu_2 profile of the leading term c1 r^a sin(a theta):
/// (K/g^2) [1 - cos g th - ((1 - cos g mu pi)/sin g mu pi) sin g th],
/// K = c1^2 a^2 (a-1)^2, g = 2a - 2.
inline double second_profile_closed_form(const ConeGeometry& cone, double c1, double theta) {
  const double a = cone.leading_exponent();
  const double g = 2.0 * a - 2.0;
  const double k = c1 * c1 * a * a * (a - 1.0) * (a - 1.0);
  const double L = cone.angle();
  return k / (g * g) *
         (1.0 - std::cos(g * theta) - (1.0 - std::cos(g * L)) / std::sin(g * L) * std::sin(g * theta));
}

inline RunResult run_expansion_check(const ExpansionCheckParams& p, ArtifactWriter& out) {
  const ConeGeometry cone = p.cone.cone();
  const ExponentLedger ledger =
      stage("ledger", [&] { return build_ledger(cone, p.target + 1e-6); });
  FreeCoefficients free;
  for (const auto& [e, v] : p.free_coefficients) free.set(e, v);
  auto build = [&](double c1) {
    return extend_to(ledger, Expansion::leading(ledger, c1, p.nodes), p.target, free);
  };
  const Expansion e = stage("extend", [&] { return build(p.c1); });
  const Expansion scaled = stage("extend", [&] { return build(p.lambda * p.c1); });
  out.write_json("expansion.json", to_json(e));
  for (std::size_t k = 0; k < e.terms().size(); ++k)
    out.write_with("profile_" + std::to_string(k) + ".csv",
                   [&](std::ostream& os) { e.terms()[k].profile.write_csv(os); });

  json terms = json::array();
  double residual = 0.0;
  // Strip residual of each exponent group: Laplacian of the group minus the
  // quadratic source at that exponent, per power of t.
  const auto sources = quadratic_source(e, p.target + 1e-6);
  for (const double g : e.distinct_exponents()) {
    if (g == e.distinct_exponents().front()) continue;
    std::vector<ThetaProfile> w, h;
    for (const auto& t : e.terms())
      if (std::abs(t.exponent.value - g) < kExponentTolerance) {
        if (w.size() <= static_cast<std::size_t>(t.log_power))
          w.resize(t.log_power + 1, ThetaProfile(cone, p.nodes));
        w[t.log_power] = t.profile;
      }
    for (const auto& s : sources)
      if (std::abs(s.value - g) < kExponentTolerance) {
        if (h.size() <= static_cast<std::size_t>(s.log_power))
          h.resize(s.log_power + 1, ThetaProfile(cone, p.nodes));
        h[s.log_power] += s.profile;
      }
    const std::size_t m = std::max(w.size(), h.size());
    w.resize(m + 2, ThetaProfile(cone, p.nodes));
    h.resize(m + 2, ThetaProfile(cone, p.nodes));
    // Homogeneous resonant parts solve the equation with zero source.
    for (std::size_t j = 0; j < m; ++j) {
      const ThetaProfile lhs = w[j].second_derivative() + (g * g) * w[j] -
                               (2.0 * (j + 1) * g) * w[j + 1] +
                               static_cast<double>((j + 2) * (j + 1)) * w[j + 2];
      const ThetaProfile r = lhs - h[j];
      double worst = 0.0;
      for (std::size_t k = 1; k + 1 < r.size(); ++k) worst = std::max(worst, std::abs(r[k]));
      residual = std::max(residual, worst);
    }
  }
  for (const auto& t : e.terms())
    terms.push_back({{"exponent", t.exponent.value}, {"log_power", t.log_power}, {"sup", t.profile.sup_norm()}});

  json checks;
  checks["strip_residual"] = check(residual < p.residual_tol, residual, p.residual_tol);
  // Quadratic scaling of the second exponent group.
  const double mu2 = ledger.size() > 1 ? ledger[1].value : 0.0;
  double scaling_err = 0.0, closed_err = 0.0;
  bool have_second = false;
  for (std::size_t k = 0; k < e.terms().size(); ++k) {
    const auto& t = e.terms()[k];
    if (std::abs(t.exponent.value - mu2) > kExponentTolerance || t.log_power != 0) continue;
    have_second = true;
    const ThetaProfile& s = scaled.terms()[k].profile;
    const double lam2 = p.lambda * p.lambda;
    for (std::size_t n = 0; n < s.size(); ++n)
      scaling_err = std::max(scaling_err, std::abs(s[n] - lam2 * t.profile[n]) /
                                              std::max(1.0, std::abs(lam2 * t.profile[n])));
    if (cone.regime() == Regime::Sharp && !ledger[1].resonant)
      for (std::size_t n = 0; n < t.profile.size(); ++n)
        closed_err = std::max(closed_err,
                              std::abs(t.profile[n] - second_profile_closed_form(cone, p.c1, t.profile.nodes()[n])));
  }
  if (have_second) {
    checks["lambda_squared_scaling"] = check(scaling_err < 1e-12, scaling_err, 1e-12);
    if (cone.regime() == Regime::Sharp && !ledger[1].resonant)
      checks["closed_form_second_profile"] = check(closed_err < 1e-8, closed_err, 1e-8);
  }
  RunResult r;
  r.summary = {{"terms", terms}, {"checks", checks}};
  if (!all_pass(checks)) r.status = RunStatus::ThresholdFailure;
  return r;
}

inline RunResult run_verify3d(const Verify3dParams& p, std::uint64_t seed, ArtifactWriter& out) {
  json checks;
  std::ostringstream table;
  table << std::left << std::setw(44) << "formula" << std::setw(24) << "value" << "result\n";
  auto row = [&](const std::string& name, double value, bool pass) {
    table << std::setw(44) << name << std::setw(24) << std::setprecision(12) << value
          << (pass ? "PASS" : "FAIL") << "\n";
    checks[name] = check(pass, value, nullptr);
  };
  for (double f : p.f_values) {
    const double m = edge_mixed_derivative(f);
    row("edge_det_f=" + std::to_string(f), std::abs(edge_hessian_determinant(m) - f),
        std::abs(edge_hessian_determinant(m) - f) < 1e-14);
  }
  row("edge_mixed_derivative(3/4) = -1/2", edge_mixed_derivative(0.75), edge_mixed_derivative(0.75) == -0.5);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rdist(0.2, 1.0), tdist(0.15, kSectorAngle - 0.15);
  double worst_lap = 0.0;
  for (std::size_t k = 0; k < p.points; ++k) {
    const double r = rdist(rng), th = tdist(rng);
    const double fd = fd_laplacian(sector_barrier, r * std::cos(th), r * std::sin(th), p.step);
    const double exact = barrier_values(r, th).laplacian_v;
    worst_lap = std::max(worst_lap, std::abs(fd - exact) / exact);
  }
  row("laplacian_barrier_rel_error", worst_lap, worst_lap < 1e-3);

  // Second-order convergence of the harmonicity defect at a fixed point.
  const double x = 0.5 * std::cos(1.0), y = 0.5 * std::sin(1.0);
  const double d1 = std::abs(fd_laplacian(sector_harmonic, x, y, 0.02));
  const double d2 = std::abs(fd_laplacian(sector_harmonic, x, y, 0.01));
  row("harmonic_fd_refinement_ratio", d1 / d2, d1 / d2 > 3.2 && d1 / d2 < 4.8);

  const auto sweep = hessian_sweep(0.1, 1.0, 0.2, kSectorAngle - 0.2, 20, 20, p.step);
  row("hessian_ratio_max", sweep.max_entry_ratio, sweep.finite);
  const auto rep = hessian_bound_check(0.7, std::numbers::pi / 3, p.step);
  row("hessian_x3_entries", rep.hessian.row(2).cwiseAbs().sum(), rep.hessian.row(2).isZero(0.0));

  out.write("verify3d.txt", table.str());
  std::cout << table.str();
  RunResult r;
  r.summary = {{"checks", checks}};
  if (!all_pass(checks)) r.status = RunStatus::ThresholdFailure;
  return r;
}

}  // namespace detail

/// Applies CORNER_MA_THREADS to the linear-algebra backend.
inline void apply_thread_limit() {
  if (const char* env = std::getenv("CORNER_MA_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1)
      throw InvalidArgument("CORNER_MA_THREADS must be a positive integer");
    Eigen::setNbThreads(static_cast<int>(n));
  }
}

/// Runs one scenario, writing artifacts, summary.json and MANIFEST.json into
/// the output directory. Never throws for stage failures: they are reported
/// in the manifest and the result.
inline RunResult run(const ScenarioConfig& config) {
  ArtifactWriter out(config.output_dir);
  out.write_json("config.json", to_json(config));
  RunResult r;
  try {
    apply_thread_limit();
    r = std::visit(
        [&](const auto& p) -> RunResult {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, LedgerParams>) return detail::run_ledger(p, out);
          else if constexpr (std::is_same_v<T, SolveParams>) return detail::run_solve(p, out);
          else if constexpr (std::is_same_v<T, AnalyzeParams>) return detail::run_analyze(p, out);
          else if constexpr (std::is_same_v<T, PipelineParams>) return detail::run_pipeline(p, out);
          else if constexpr (std::is_same_v<T, ExpansionCheckParams>)
            return detail::run_expansion_check(p, out);
          else return detail::run_verify3d(p, config.seed, out);
        },
        config.parameters);
  } catch (const StageError& e) {
    r.status = RunStatus::Error;
    r.failed_stage = e.stage();
    r.message = e.what();
  } catch (const std::exception& e) {
    r.status = RunStatus::Error;
    r.failed_stage = "setup";
    r.message = e.what();
  }
  json summary = r.summary;
  summary["scenario"] = to_string(config.scenario);
  summary["status"] = r.status == RunStatus::Pass ? "pass"
                      : r.status == RunStatus::ThresholdFailure ? "threshold_failure"
                                                                : "error";
  if (r.failed_stage) summary["failed_stage"] = *r.failed_stage;
  if (!r.message.empty()) summary["message"] = r.message;
  r.summary = summary;
  out.write_json("summary.json", summary);
  out.write_manifest(to_string(config.scenario), summary["status"].get<std::string>(),
                     r.failed_stage, r.message.empty() ? std::nullopt : std::optional(r.message));
  return r;
}

}  // namespace corner_ma
