#include "heckmi/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "heckmi/config.hpp"
#include "heckmi/dataset.hpp"
#include "heckmi/errors.hpp"
#include "heckmi/mice.hpp"
#include "heckmi/parallel.hpp"
#include "heckmi/sim.hpp"

namespace heckmi {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

template <typename F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    log << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitComputation;
  }
}

fs::path output_dir(const CliOptions& o, const RunConfig* rc) {
  if (o.out) return *o.out;
  if (rc && !rc->output_dir.empty()) return rc->output_dir;
  return ".";
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ValidationError("cannot create output directory '" + p.string() + "': " + ec.message());
}

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "scenario,method,estimand,measure,value,mcse\n";
  for (const auto& r : rows)
    os << r.scenario << ',' << r.method << ',' << r.estimand << ',' << r.measure << ',' << format_double(r.value) << ','
       << format_double(r.mcse) << '\n';
  write_text(path, os.str());
}

ojson metric_json(const MetricRow& r) {
  ojson j;
  j["method"] = r.method;
  j["estimand"] = r.estimand;
  j["measure"] = r.measure;
  j["value"] = number_or_null(r.value);
  j["mcse"] = number_or_null(r.mcse);
  return j;
}

ojson scenario_json(const ScenarioConfig& c) {
  ojson j;
  j["name"] = c.name;
  j["family"] = to_string(c.family);
  j["rho"] = c.rho;
  j["n_clusters"] = c.n_clusters;
  j["cluster_size"] = c.cluster_size;
  j["error_model"] = to_string(c.error_model);
  j["n_reps"] = c.n_reps;
  j["m"] = c.m;
  j["seed"] = c.seed;
  j["psi_structure"] = to_string(c.psi_structure);
  ojson methods = ojson::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  return j;
}

struct Figure {
  const char* file;
  bool (*includes)(const ScenarioConfig&);
};

bool base_design(const ScenarioConfig& c) { return c.n_clusters == 10 && c.cluster_size == 1000; }

const Figure kFigures[] = {
    {"plot_rho_continuous.csv",
     [](const ScenarioConfig& c) {
       return c.family == Family::continuous && c.error_model == ErrorModel::bvn && base_design(c);
     }},
    {"plot_rho_binary.csv",
     [](const ScenarioConfig& c) {
       return c.family == Family::binary && c.error_model == ErrorModel::bvn && base_design(c);
     }},
    {"plot_size.csv",
     [](const ScenarioConfig& c) {
       return c.family == Family::continuous && c.error_model == ErrorModel::bvn && std::abs(c.rho - 0.6) < 1e-12;
     }},
    {"plot_distribution.csv",
     [](const ScenarioConfig& c) {
       return c.family == Family::continuous && std::abs(c.rho - 0.6) < 1e-12 && base_design(c);
     }},
};

void write_plot_data(const fs::path& dir, const std::vector<ScenarioMetrics>& all) {
  for (const Figure& fig : kFigures) {
    std::ostringstream os;
    os << "scenario,family,rho,n_clusters,cluster_size,error_model,method,estimand,measure,value,mcse\n";
    for (const auto& sm : all) {
      const ScenarioConfig& c = sm.config;
      if (!fig.includes(c)) continue;
      for (const auto& r : sm.rows)
        os << c.name << ',' << to_string(c.family) << ',' << format_double(c.rho) << ',' << c.n_clusters << ','
           << c.cluster_size << ',' << to_string(c.error_model) << ',' << r.method << ',' << r.estimand << ','
           << r.measure << ',' << format_double(r.value) << ',' << format_double(r.mcse) << '\n';
    }
    write_text(dir / fig.file, os.str());
  }
}

int resolve_workers(const CliOptions& o, const RunConfig* rc) {
  if (o.workers) {
    if (*o.workers < 1) throw ValidationError("--workers must be at least 1");
    return *o.workers;
  }
  if (rc && rc->workers) return *rc->workers;
  return default_workers();
}

std::optional<double> opt_finite(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? v : std::nullopt;
}

ojson report_json(const MIDataset& mi, const std::vector<std::string>& files, const RunConfig& rc) {
  ojson j;
  j["seed"] = mi.seed;
  j["rng_path"] = mi.rng_path;
  j["m"] = mi.m;
  j["iterations"] = mi.iterations;
  j["psi_structure"] = to_string(rc.psi_structure);
  ojson specs = ojson::array();
  for (std::size_t s = 0; s < mi.reports.size(); ++s) {
    const SpecReport& rep = mi.reports[s];
    ojson js;
    js["name"] = rep.spec_name;
    js["target"] = rep.target;
    js["method"] = to_string(rep.method);
    js["family"] = to_string(mi.specs[s].family);
    js["n_missing"] = rep.n_missing;
    if (rep.binary_coding) js["binary_coding"] = {{"0", rep.binary_coding->first}, {"1", rep.binary_coding->second}};
    ojson clusters = ojson::array();
    int n_est = 0, n_fb = 0;
    for (const auto& c : rep.clusters) {
      ojson jc;
      jc["cluster"] = c.cluster;
      jc["n_rows"] = c.n_rows;
      jc["n_observed"] = c.n_observed;
      jc["status"] = c.status == ClusterStatus::estimable ? "estimable" : "fallback";
      (c.status == ClusterStatus::estimable ? n_est : n_fb) += 1;
      if (!c.reason.empty()) jc["reason"] = c.reason;
      if (auto r = opt_finite(c.rho_hat)) {
        jc["rho_hat"] = *r;
        jc["rho_ci"] = {number_or_null(c.rho_lower.value_or(NAN)), number_or_null(c.rho_upper.value_or(NAN))};
      }
      clusters.push_back(jc);
    }
    js["n_estimable"] = n_est;
    js["n_fallback"] = n_fb;
    js["clusters"] = clusters;
    ojson proj = ojson::array();
    double mx = 0.0;
    for (double d : rep.projection_distances) {
      proj.push_back(number_or_null(d));
      mx = std::max(mx, d);
    }
    js["psd_projection"] = {{"max_distance", mx}, {"per_draw", proj}};
    js["binary_probability_fallbacks"] = rep.binary_probability_fallbacks;
    specs.push_back(js);
  }
  j["specs"] = specs;
  j["outputs"] = files;
  return j;
}

}  // namespace

int cmd_impute(const std::string& data_path, const std::string& config_path, const CliOptions& o, std::ostream& log) {
  return guarded(log, [&] {
    RunConfig rc = load_config(config_path);
    if (rc.specs.empty()) throw ValidationError("config has no imputation specs");
    if (o.seed) rc.seed = *o.seed;
    if (o.m) {
      if (*o.m < 1) throw ValidationError("--m must be at least 1");
      rc.m = *o.m;
    }
    const int workers = resolve_workers(o, &rc);
    const TabularDataset data = TabularDataset::read_csv(data_path);
    const std::vector<ImputationSpec> specs = ordered_specs(rc);
    std::vector<std::string> targets;
    for (const auto& s : specs) targets.push_back(s.target);
    for (const auto& s : specs) validate_spec(s, data, specs.size() > 1 ? targets : std::vector<std::string>{});
    const fs::path dir = output_dir(o, &rc);
    if (o.dry_run) {
      log << "dry run: data (" << data.n_rows() << " rows) and " << specs.size() << " spec(s) are valid\n";
      return static_cast<int>(kExitOk);
    }
    ensure_dir(dir);
    EngineOptions eo;
    eo.psi_structure = rc.psi_structure;
    eo.workers = workers;
    const RngStream rng(rc.seed);
    const MIDataset mi = specs.size() == 1 ? impute_univariate(data, specs.front(), rc.m, rng, eo)
                                           : impute_chained(data, specs, rc.m, rc.iterations, rng, eo);
    std::vector<std::string> files;
    for (int k = 0; k < mi.m; ++k) {
      const std::string name = "imp_" + std::to_string(k + 1) + ".csv";
      mi.completed[static_cast<std::size_t>(k)].write_csv((dir / name).string());
      files.push_back(name);
    }
    write_text(dir / "imputation_report.json", report_json(mi, files, rc).dump(2) + "\n");
    for (const auto& rep : mi.reports) {
      int fb = 0;
      for (const auto& c : rep.clusters) fb += c.status == ClusterStatus::fallback ? 1 : 0;
      log << "spec '" << rep.spec_name << "': " << rep.n_missing << " missing cells, " << fb << " fallback cluster(s)\n";
    }
    log << "wrote " << mi.m << " imputed datasets to " << dir.string() << "\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_simulate(const std::string& config_path, const CliOptions& o, std::ostream& log) {
  return guarded(log, [&] {
    RunConfig rc = load_config(config_path);
    if (rc.scenarios.empty()) throw ValidationError("config has no scenarios");
    for (auto& s : rc.scenarios) {
      if (o.seed) s.seed = *o.seed;
      if (o.m) s.m = *o.m;
      if (o.reps) s.n_reps = *o.reps;
      validate(s);
    }
    const int workers = resolve_workers(o, &rc);
    const fs::path dir = output_dir(o, &rc);
    if (o.dry_run) {
      log << "dry run: " << rc.scenarios.size() << " scenario(s) are valid\n";
      return static_cast<int>(kExitOk);
    }
    ensure_dir(dir);
    std::vector<ScenarioMetrics> all;
    std::vector<MetricRow> rows;
    ojson scenarios = ojson::array();
    for (const auto& s : rc.scenarios) {
      log << "scenario '" << s.name << "': " << s.n_reps << " replicates\n";
      ScenarioMetrics sm = run_scenario(s, workers);
      rows.insert(rows.end(), sm.rows.begin(), sm.rows.end());
      ojson js;
      js["config"] = scenario_json(s);
      ojson methods = ojson::array();
      for (const auto& ms : sm.summaries) {
        methods.push_back({{"method", to_string(ms.method)},
                           {"n_reps", ms.n_reps},
                           {"n_run", ms.n_run},
                           {"mean_seconds", ms.mean_seconds}});
        log << "  " << to_string(ms.method) << ": " << ms.n_run << "/" << ms.n_reps << " converged\n";
      }
      js["methods"] = methods;
      ojson metrics = ojson::array();
      for (const auto& r : sm.rows) metrics.push_back(metric_json(r));
      js["metrics"] = metrics;
      scenarios.push_back(js);
      sm.results.clear();
      all.push_back(std::move(sm));
    }
    write_metrics_csv(dir / "metrics.csv", rows);
    ojson report;
    report["scenarios"] = scenarios;
    write_text(dir / "metrics.json", report.dump(2) + "\n");
    if (o.emit_plot_data) write_plot_data(dir, all);
    log << "wrote metrics to " << dir.string() << "\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_evaluate(const std::string& truth_path, const std::string& imputed_dir,
                 const std::optional<std::string>& incomplete_path, const CliOptions& o, std::ostream& log) {
  return guarded(log, [&] {
    const TabularDataset truth = TabularDataset::read_csv(truth_path);
    const fs::path dir(imputed_dir);
    if (!fs::is_directory(dir)) throw ValidationError("imputed directory '" + imputed_dir + "' not found");
    int m = 0;
    if (o.m) {
      m = *o.m;
    } else {
      for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("imp_", 0) == 0 && name.size() > 8 && name.substr(name.size() - 4) == ".csv") {
          try {
            m = std::max(m, std::stoi(name.substr(4, name.size() - 8)));
          } catch (const std::exception&) {
          }
        }
      }
    }
    if (m < 1) throw ValidationError("no imputation files imp_<k>.csv in '" + imputed_dir + "'");
    for (int k = 1; k <= m; ++k)
      if (!fs::exists(dir / ("imp_" + std::to_string(k) + ".csv")))
        throw ValidationError("imputation file " + std::to_string(k) + " (imp_" + std::to_string(k) +
                              ".csv) is missing");
    std::optional<TabularDataset> incomplete;
    if (incomplete_path) incomplete = TabularDataset::read_csv(*incomplete_path);
    if (incomplete && incomplete->n_rows() != truth.n_rows())
      throw ValidationError("incomplete data has a different number of rows from the truth");
    if (o.dry_run) {
      log << "dry run: truth and " << m << " imputation file(s) found\n";
      return static_cast<int>(kExitOk);
    }
    // Columns scored: numeric truth columns (present in the incomplete table, if given).
    std::vector<std::string> cols;
    for (const auto& name : truth.column_names()) {
      const auto& v = truth.values(name);
      if (std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); })) continue;
      if (incomplete && !incomplete->has_column(name)) continue;
      cols.push_back(name);
    }
    std::map<std::string, std::vector<double>> mean_diff, sq_diff;
    for (int k = 1; k <= m; ++k) {
      const TabularDataset imp = TabularDataset::read_csv((dir / ("imp_" + std::to_string(k) + ".csv")).string());
      if (imp.n_rows() != truth.n_rows())
        throw ValidationError("imputation file " + std::to_string(k) + " has " + std::to_string(imp.n_rows()) +
                              " rows, truth has " + std::to_string(truth.n_rows()));
      for (const auto& name : cols) {
        if (!imp.has_column(name))
          throw ValidationError("imputation file " + std::to_string(k) + " lacks column '" + name + "'");
        const auto& tv = truth.values(name);
        const auto& iv = imp.values(name);
        const std::size_t ic = incomplete ? incomplete->column_index(name) : 0;
        double s = 0.0, ss = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < truth.n_rows(); ++r) {
          if (incomplete && !incomplete->is_missing(ic, r)) continue;
          if (std::isnan(iv[r]))
            throw ValidationError("imputation file " + std::to_string(k) + " has a missing or non-numeric value in '" +
                                  name + "' at row " + std::to_string(r + 1));
          s += iv[r] - tv[r];
          ss += (iv[r] - tv[r]) * (iv[r] - tv[r]);
          ++n;
        }
        if (n == 0) continue;
        mean_diff[name].push_back(s / static_cast<double>(n));
        sq_diff[name].push_back(ss / static_cast<double>(n));
      }
    }
    std::vector<MetricRow> rows;
    const double md = static_cast<double>(m);
    for (const auto& name : cols) {
      if (!mean_diff.count(name)) continue;
      const auto& d = mean_diff[name];
      const auto& q = sq_diff[name];
      double mu = 0.0, mq = 0.0;
      for (std::size_t k = 0; k < d.size(); ++k) {
        mu += d[k] / md;
        mq += q[k] / md;
      }
      double var = 0.0, varq = 0.0;
      for (std::size_t k = 0; k < d.size(); ++k) {
        var += (d[k] - mu) * (d[k] - mu);
        varq += (q[k] - mq) * (q[k] - mq);
      }
      const double mcse_bias = m > 1 ? std::sqrt(var / (md - 1.0) / md) : NAN;
      const double rmse = std::sqrt(mq);
      const double mcse_rmse = m > 1 ? (rmse > 0 ? std::sqrt(varq / (md - 1.0) / md) / (2.0 * rmse) : 0.0) : NAN;
      rows.push_back({"evaluate", "imputed", name, "bias", mu, mcse_bias});
      rows.push_back({"evaluate", "imputed", name, "rmse", rmse, mcse_rmse});
    }
    const fs::path out = output_dir(o, nullptr);
    ensure_dir(out);
    write_metrics_csv(out / "metrics.csv", rows);
    ojson report;
    report["m"] = m;
    ojson metrics = ojson::array();
    for (const auto& r : rows) metrics.push_back(metric_json(r));
    report["metrics"] = metrics;
    write_text(out / "metrics.json", report.dump(2) + "\n");
    log << "scored " << m << " imputation(s) over " << mean_diff.size() << " column(s)\n";
    return static_cast<int>(kExitOk);
  });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Multilevel Heckman-model multiple imputation"};
  app.require_subcommand(1);
  CliOptions o;
  std::uint64_t seed = 0;
  int workers = 0, m = 0, reps = 0;
  std::string out;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Master random seed");
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Number of imputations")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Output directory");
    sub->add_flag("--dry-run", o.dry_run, "Validate inputs without computing");
  };

  std::string data_path, config_path, truth_path, imputed_dir, incomplete_path;
  CLI::App* imp = app.add_subcommand("impute", "Impute a clustered CSV");
  imp->add_option("data", data_path, "Input CSV")->required();
  imp->add_option("--config", config_path, "Run configuration (JSON)")->required();
  add_common(imp);

  CLI::App* sim = app.add_subcommand("simulate", "Run simulation scenarios");
  sim->add_option("--config", config_path, "Run configuration (JSON)")->required();
  sim->add_option("--reps", reps, "Replicates per scenario")->check(CLI::PositiveNumber);
  sim->add_flag("--emit-plot-data", o.emit_plot_data, "Write per-figure CSVs");
  add_common(sim);

  CLI::App* ev = app.add_subcommand("evaluate", "Score imputations against complete data");
  ev->add_option("truth", truth_path, "Complete CSV")->required();
  ev->add_option("imputed_dir", imputed_dir, "Directory holding imp_<k>.csv")->required();
  ev->add_option("--incomplete", incomplete_path, "Incomplete CSV; only its missing cells are scored");
  add_common(ev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? static_cast<int>(kExitOk) : static_cast<int>(kExitValidation);
  }
  auto set = [](CLI::App* sub, const char* name) { return sub->count(name) > 0; };
  CLI::App* active = app.get_subcommands().front();
  if (set(active, "--seed")) o.seed = seed;
  if (set(active, "--workers")) o.workers = workers;
  if (set(active, "--m")) o.m = m;
  if (active == sim && set(active, "--reps")) o.reps = reps;
  if (set(active, "--out")) o.out = out;

  if (active == imp) return cmd_impute(data_path, config_path, o, std::cerr);
  if (active == sim) return cmd_simulate(config_path, o, std::cerr);
  std::optional<std::string> inc;
  if (set(ev, "--incomplete")) inc = incomplete_path;
  return cmd_evaluate(truth_path, imputed_dir, inc, o, std::cerr);
}

}  // namespace heckmi
