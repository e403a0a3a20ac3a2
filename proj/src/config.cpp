#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "mfflow/errors.hpp"
#include "mfflow/experiment.hpp"

namespace mfflow {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

Flavor parse_flavor(const std::string& s) {
  if (s == "invariant") return Flavor::Invariant;
  if (s == "anti-invariant") return Flavor::AntiInvariant;
  throw ConfigError("unknown flavor '" + s + "' (expected invariant or anti-invariant)");
}

TransformSpec parse_transform(const json& j) {
  if (!j.is_object()) throw ConfigError("group entries must be objects");
  TransformSpec t;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind")
      t.kind = value.get<std::string>();
    else if (key == "axis")
      t.axis = value.get<int>();
    else if (key == "flavor")
      t.flavor = value.get<std::string>();
    else
      throw ConfigError("unknown group field '" + key + "'");
  }
  if (t.kind != "identity" && t.kind != "negation" && t.kind != "reflection")
    throw ConfigError("unknown transform kind '" + t.kind + "'");
  parse_flavor(t.flavor);
  return t;
}

ordered_json transform_to_json(const TransformSpec& t) {
  ordered_json j;
  j["kind"] = t.kind;
  if (t.kind == "reflection") j["axis"] = t.axis;
  j["flavor"] = t.flavor;
  return j;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (n - 1);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"d", [](auto& c, const json& v) { c.d = v.get<int>(); }},
      {"d-H", [](auto& c, const json& v) { c.d_H = v.get<int>(); }},
      {"m", [](auto& c, const json& v) { c.m = v.get<int>(); }},
      {"eta", [](auto& c, const json& v) { c.eta = v.get<double>(); }},
      {"N", [](auto& c, const json& v) { c.N = v.get<int>(); }},
      {"K", [](auto& c, const json& v) { c.K = v.get<int>(); }},
      {"seed", [](auto& c, const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"log-every", [](auto& c, const json& v) { c.log_every = v.get<int>(); }},
      {"bins", [](auto& c, const json& v) { c.bins = v.get<int>(); }},
      {"prefactor", [](auto& c, const json& v) { c.prefactor = v.get<std::string>(); }},
      {"overshoot", [](auto& c, const json& v) { c.overshoot = v.get<std::string>(); }},
      {"reduced-scheme", [](auto& c, const json& v) { c.reduced_scheme = v.get<std::string>(); }},
      {"loss-nodes", [](auto& c, const json& v) { c.loss_nodes = v.get<int>(); }},
      {"phi-table-grid", [](auto& c, const json& v) { c.phi_table_grid = v.get<int>(); }},
      {"batch-mode", [](auto& c, const json& v) { c.batch_mode = v.get<std::string>(); }},
      {"target", [](auto& c, const json& v) { c.target = v.get<std::string>(); }},
      {"target-linear", [](auto& c, const json& v) { c.target_linear = v.get<std::vector<double>>(); }},
      {"target-cubic", [](auto& c, const json& v) { c.target_cubic = v.get<std::vector<double>>(); }},
      {"group",
       [](auto& c, const json& v) {
         if (!v.is_array()) throw ConfigError("group must be an array");
         c.group.clear();
         for (const auto& t : v) c.group.push_back(parse_transform(t));
       }},
      {"loss-samples", [](auto& c, const json& v) { c.loss_samples = v.get<int>(); }},
      {"r-grid", [](auto& c, const json& v) { c.r_grid = v.get<std::vector<double>>(); }},
      {"test-points", [](auto& c, const json& v) { c.test_points = v.get<int>(); }},
      {"n-samples", [](auto& c, const json& v) { c.n_samples = v.get<int>(); }},
      {"runs", [](auto& c, const json& v) { c.runs = v.get<int>(); }},
      {"zero-start", [](auto& c, const json& v) { c.zero_start = v.get<bool>(); }},
      {"m-sweep", [](auto& c, const json& v) { c.m_sweep = v.get<std::vector<int>>(); }},
  };
  return table;
}

}  // namespace

OrthogonalTransform TransformSpec::build(int d) const {
  const Flavor f = parse_flavor(flavor);
  if (kind == "identity") return OrthogonalTransform::identity(d, f);
  if (kind == "negation") return OrthogonalTransform::negation(d, f);
  if (kind == "reflection") {
    if (axis < 0 || axis >= d) throw ConfigError("reflection axis out of range");
    return OrthogonalTransform::reflection(d, axis, f);
  }
  throw ConfigError("unknown transform kind '" + kind + "'");
}

PrefactorMode ExperimentConfig::prefactor_mode() const {
  if (prefactor == "one-over-n") return PrefactorMode::OneOverN;
  if (prefactor == "d-over-n") return PrefactorMode::DimensionOverN;
  throw ConfigError("unknown prefactor '" + prefactor + "'");
}

OvershootMode ExperimentConfig::overshoot_mode() const {
  if (overshoot == "allow") return OvershootMode::Allow;
  if (overshoot == "clamp") return OvershootMode::Clamp;
  throw ConfigError("unknown overshoot mode '" + overshoot + "'");
}

ReducedScheme ExperimentConfig::reduced_scheme_mode() const {
  if (reduced_scheme == "euler") return ReducedScheme::Euler;
  if (reduced_scheme == "lifted") return ReducedScheme::Lifted;
  throw ConfigError("unknown reduced scheme '" + reduced_scheme + "'");
}

TargetSpec ExperimentConfig::target_spec() const {
  if (target == "norm-on-subspace") return TargetSpec::norm_on_subspace(dims());
  if (target == "odd-linear") return TargetSpec::odd_linear_combination(target_linear, target_cubic);
  throw ConfigError("unknown target '" + target + "'");
}

std::vector<OrthogonalTransform> ExperimentConfig::generators() const {
  std::vector<OrthogonalTransform> out;
  for (const auto& t : group) out.push_back(t.build(d));
  return out;
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"linear-figure1", "perp-scan-figure2", "reduced-figure3",
                                                 "reduction-equivalence", "invariance-suite"};
  return names;
}

ExperimentConfig default_config(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "reduced-figure3") return c;
  if (experiment == "linear-figure1") {
    c.d = 5;
    c.d_H = 1;
    c.m = 1000;
    c.eta = 1e-2;
    c.K = 20000;
    c.log_every = 100;
    c.n_samples = 100;
    c.runs = 10;
    return c;
  }
  if (experiment == "perp-scan-figure2") {
    c.d = 20;
    c.d_H = 5;
    c.m = 256;
    c.eta = 5e-2;
    c.N = 1000;
    c.K = 10000;
    c.log_every = 100;
    c.r_grid = linspace(0.0, 1.0, 11);
    c.loss_samples = 20000;
    return c;
  }
  if (experiment == "reduction-equivalence") {
    c.d = 10;
    c.d_H = 3;
    c.m = 1024;
    c.eta = 5e-2;
    c.N = 2000;
    c.K = 500;
    c.log_every = 25;
    c.prefactor = "one-over-n";
    c.reduced_scheme = "lifted";
    c.group = {TransformSpec{"negation", 0, "invariant"}};
    c.m_sweep = {256, 1024, 4096};
    c.loss_samples = 20000;
    c.batch_mode = "exact";
    return c;
  }
  if (experiment == "invariance-suite") {
    c.d = 10;
    c.d_H = 3;
    c.m = 64;
    c.eta = 1e-3;
    c.N = 200;
    c.K = 1000;
    c.log_every = 10;
    c.test_points = 100;
    c.target_linear = {1.0, -0.5, 0.25};
    c.target_cubic = {0.5};
    c.loss_samples = 2000;
    return c;
  }
  throw ConfigError("unknown experiment '" + experiment + "'");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("experiment") || !j["experiment"].is_string())
    throw ConfigError("config needs a string field 'experiment'");
  ExperimentConfig c = default_config(j["experiment"].get<std::string>());
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    if (key == "experiment") continue;
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + key + "': " + e.what());
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["experiment"] = c.experiment;
  j["d"] = c.d;
  j["d-H"] = c.d_H;
  j["m"] = c.m;
  j["eta"] = c.eta;
  j["N"] = c.N;
  j["K"] = c.K;
  j["seed"] = c.seed;
  j["log-every"] = c.log_every;
  j["bins"] = c.bins;
  j["prefactor"] = c.prefactor;
  j["overshoot"] = c.overshoot;
  j["reduced-scheme"] = c.reduced_scheme;
  j["loss-nodes"] = c.loss_nodes;
  j["phi-table-grid"] = c.phi_table_grid;
  j["batch-mode"] = c.batch_mode;
  j["target"] = c.target;
  j["target-linear"] = c.target_linear;
  j["target-cubic"] = c.target_cubic;
  j["group"] = ordered_json::array();
  for (const auto& t : c.group) j["group"].push_back(transform_to_json(t));
  j["loss-samples"] = c.loss_samples;
  j["r-grid"] = c.r_grid;
  j["test-points"] = c.test_points;
  j["n-samples"] = c.n_samples;
  j["runs"] = c.runs;
  j["zero-start"] = c.zero_start;
  j["m-sweep"] = c.m_sweep;
  return j.dump(2) + "\n";
}

void validate(const ExperimentConfig& c) {
  const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  bool known = false;
  for (const auto& n : experiment_names()) known = known || n == c.experiment;
  if (!known) fail("unknown experiment '" + c.experiment + "'");
  if (c.d_H < 1) fail("d-H must be >= 1");
  if (c.d - c.d_H < 1) fail("d must exceed d-H (the orthogonal complement cannot be empty)");
  if (!(c.eta > 0.0)) fail("eta must be > 0");
  const int min_k = c.experiment == "reduction-equivalence" ? 0 : 1;
  if (c.K < min_k) fail("K must be >= " + std::to_string(min_k));
  if (c.N < 1) fail("N must be >= 1");
  if (c.m < 1) fail("m must be >= 1");
  if (c.log_every < 1) fail("log-every must be >= 1");
  if (c.bins < 2) fail("bins must be >= 2");
  if (c.loss_nodes < 8) fail("loss-nodes must be >= 8");
  if (c.phi_table_grid < 2) fail("phi-table-grid must be >= 2");
  if (c.loss_samples < 2) fail("loss-samples must be >= 2");
  if (c.test_points < 1) fail("test-points must be >= 1");
  if (c.runs < 1) fail("runs must be >= 1");
  if (c.n_samples < c.d) fail("n-samples must be >= d");
  if (c.batch_mode != "fresh" && c.batch_mode != "frozen" && c.batch_mode != "exact")
    fail("batch-mode must be fresh, frozen or exact");
  if (c.batch_mode == "exact") {
    if (c.experiment != "reduction-equivalence")
      fail("batch-mode exact is only available for reduction-equivalence");
    if (c.target != "norm-on-subspace") fail("batch-mode exact needs the norm-on-subspace target");
  }
  c.prefactor_mode();
  c.overshoot_mode();
  c.reduced_scheme_mode();
  if (c.target != "norm-on-subspace" && c.target != "odd-linear") fail("unknown target '" + c.target + "'");
  if (c.target == "odd-linear" &&
      static_cast<int>(std::max(c.target_linear.size(), c.target_cubic.size())) > c.d)
    fail("target coefficients exceed d");
  for (int w : c.m_sweep)
    if (w < 1) fail("m-sweep entries must be >= 1");
  try {
    const auto gens = c.generators();
    if (!gens.empty()) {
      const auto group = generate_group(gens);
      const auto g = static_cast<int>(group.size());
      const auto check = [&](int m) {
        if (m % g != 0)
          fail("width " + std::to_string(m) + " is not a multiple of the group size " + std::to_string(g));
      };
      check(c.m);
      for (int w : c.m_sweep) check(w);
    }
  } catch (const InvalidArgument& e) {
    fail(e.what());
  } catch (const GroupTooLarge& e) {
    fail(e.what());
  }
}

}  // namespace mfflow
