#include "heckmi/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "heckmi/errors.hpp"

namespace heckmi {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

std::string join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

std::string get_string(const json& obj, const std::string& where, const std::string& key) {
  const json& v = obj.at(key);
  if (!v.is_string()) throw ValidationError(join(where, key) + ": expected a string");
  return v.get<std::string>();
}

long long get_integer(const json& obj, const std::string& where, const std::string& key, long long lo, long long hi) {
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ValidationError(join(where, key) + ": expected an integer");
  const long long x = v.get<long long>();
  if (x < lo || x > hi)
    throw ValidationError(join(where, key) + ": value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  return x;
}

std::vector<std::string> get_strings(const json& obj, const std::string& where, const std::string& key) {
  const json& v = obj.at(key);
  if (!v.is_array()) throw ValidationError(join(where, key) + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ValidationError(join(where, key) + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

template <typename F>
auto wrap(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

ImputationSpec parse_spec(const json& j, const std::string& where, const std::string& default_cluster) {
  check_keys(j, where, {"name", "target", "family", "method", "outcome_predictors", "selection_predictors",
                        "cluster_column"});
  for (const char* k : {"target", "outcome_predictors"})
    if (!j.contains(k)) throw ValidationError(where + ": missing key '" + k + "'");
  ImputationSpec s;
  s.target = get_string(j, where, "target");
  s.name = j.contains("name") ? get_string(j, where, "name") : s.target;
  if (j.contains("family")) s.family = wrap(join(where, "family"), [&] { return family_from_string(get_string(j, where, "family")); });
  if (j.contains("method"))
    s.method = wrap(join(where, "method"), [&] { return imputation_method_from_string(get_string(j, where, "method")); });
  s.outcome_predictors = get_strings(j, where, "outcome_predictors");
  if (j.contains("selection_predictors")) s.selection_predictors = get_strings(j, where, "selection_predictors");
  s.cluster_column = j.contains("cluster_column") ? get_string(j, where, "cluster_column") : default_cluster;
  validate_spec(s);
  return s;
}

std::vector<ScenarioConfig> parse_scenario(const json& j, const std::string& where, const RunConfig& rc) {
  check_keys(j, where, {"name", "family", "rho", "n_clusters", "cluster_size", "error_model", "n_reps", "methods",
                        "m", "seed"});
  ScenarioConfig base;
  base.seed = rc.seed;
  base.m = rc.m;
  base.psi_structure = rc.psi_structure;
  if (j.contains("name")) base.name = get_string(j, where, "name");
  if (j.contains("family"))
    base.family = wrap(join(where, "family"), [&] { return family_from_string(get_string(j, where, "family")); });
  if (j.contains("n_clusters")) base.n_clusters = static_cast<int>(get_integer(j, where, "n_clusters", 2, 100000));
  if (j.contains("cluster_size")) base.cluster_size = static_cast<int>(get_integer(j, where, "cluster_size", 1, 10000000));
  if (j.contains("error_model"))
    base.error_model =
        wrap(join(where, "error_model"), [&] { return error_model_from_string(get_string(j, where, "error_model")); });
  if (j.contains("n_reps")) base.n_reps = static_cast<int>(get_integer(j, where, "n_reps", 1, 1000000));
  if (j.contains("m")) base.m = static_cast<int>(get_integer(j, where, "m", 2, 100000));
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ValidationError(join(where, "seed") + ": expected a non-negative integer");
    base.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("methods")) {
    base.methods.clear();
    for (const auto& name : get_strings(j, where, "methods"))
      base.methods.push_back(wrap(join(where, "methods"), [&] { return method_from_string(name); }));
  }
  std::vector<double> rhos{base.rho};
  if (j.contains("rho")) {
    const json& r = j.at("rho");
    rhos.clear();
    if (r.is_number()) {
      rhos.push_back(r.get<double>());
    } else if (r.is_array() && !r.empty()) {
      for (const auto& e : r) {
        if (!e.is_number()) throw ValidationError(join(where, "rho") + ": expected a number or array of numbers");
        rhos.push_back(e.get<double>());
      }
    } else {
      throw ValidationError(join(where, "rho") + ": expected a number or array of numbers");
    }
  }
  std::vector<ScenarioConfig> out;
  for (double rho : rhos) {
    ScenarioConfig c = base;
    c.rho = rho;
    if (rhos.size() > 1) {
      std::ostringstream os;
      os << base.name << "_rho" << rho;
      c.name = os.str();
    }
    validate(c);
    out.push_back(c);
  }
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"seed", "workers", "m", "iterations", "meta", "cluster_column", "specs", "visit_order",
                           "scenarios", "output_dir"});
  RunConfig rc;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ValidationError("seed: expected a non-negative integer");
    rc.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("workers")) rc.workers = static_cast<int>(get_integer(j, "", "workers", 1, 4096));
  if (j.contains("m")) rc.m = static_cast<int>(get_integer(j, "", "m", 1, 100000));
  if (j.contains("iterations")) rc.iterations = static_cast<int>(get_integer(j, "", "iterations", 0, 100000));
  if (j.contains("meta")) {
    const json& meta = j.at("meta");
    check_keys(meta, "meta", {"psi_structure"});
    if (meta.contains("psi_structure"))
      rc.psi_structure =
          wrap("meta.psi_structure", [&] { return psi_structure_from_string(get_string(meta, "meta", "psi_structure")); });
  }
  if (j.contains("cluster_column")) rc.cluster_column = get_string(j, "", "cluster_column");
  if (j.contains("output_dir")) rc.output_dir = get_string(j, "", "output_dir");
  if (j.contains("specs")) {
    const json& specs = j.at("specs");
    if (!specs.is_array()) throw ValidationError("specs: expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      ImputationSpec s = parse_spec(specs[i], "specs[" + std::to_string(i) + "]", rc.cluster_column);
      if (!names.insert(s.name).second) throw ValidationError("specs: duplicate spec name '" + s.name + "'");
      rc.specs.push_back(std::move(s));
    }
  }
  if (j.contains("visit_order")) {
    rc.visit_order = get_strings(j, "", "visit_order");
    std::set<std::string> seen;
    for (const auto& n : rc.visit_order) {
      bool found = false;
      for (const auto& s : rc.specs) found = found || s.name == n;
      if (!found) throw ValidationError("visit_order: no spec named '" + n + "'");
      if (!seen.insert(n).second) throw ValidationError("visit_order: '" + n + "' listed twice");
    }
    if (seen.size() != rc.specs.size()) throw ValidationError("visit_order: must list every spec exactly once");
  }
  if (j.contains("scenarios")) {
    const json& sc = j.at("scenarios");
    if (!sc.is_array()) throw ValidationError("scenarios: expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < sc.size(); ++i)
      for (auto& c : parse_scenario(sc[i], "scenarios[" + std::to_string(i) + "]", rc)) {
        if (!names.insert(c.name).second) throw ValidationError("scenarios: duplicate scenario name '" + c.name + "'");
        rc.scenarios.push_back(std::move(c));
      }
  }
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<ImputationSpec> ordered_specs(const RunConfig& config) {
  if (config.visit_order.empty()) return config.specs;
  std::vector<ImputationSpec> out;
  for (const auto& n : config.visit_order)
    for (const auto& s : config.specs)
      if (s.name == n) out.push_back(s);
  return out;
}

}  // namespace heckmi
