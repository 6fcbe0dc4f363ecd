#include "heckmi/mice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "heckmi/draw.hpp"
#include "heckmi/errors.hpp"
#include "heckmi/parallel.hpp"
#include "heckmi/special.hpp"

namespace heckmi {

namespace {

struct Design {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> rows;
};

Design cluster_design(const TabularDataset& data, const std::string& cluster_column) {
  const std::size_t col = data.column_index(cluster_column);
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    if (data.is_missing(col, r))
      throw ValidationError("row " + std::to_string(r + 1) + " has no cluster label in '" + cluster_column + "'");
    groups[data.text(col, r)].push_back(r);
  }
  Design d;
  for (auto& [label, rows] : groups) {
    d.labels.push_back(label);
    d.rows.push_back(std::move(rows));
  }
  return d;
}

struct Coding {
  bool recoded = false;
  std::string label0 = "0";
  std::string label1 = "1";
};

// Binary targets are normalised to {0,1}; any other two-level coding is
// mapped in sorted order (numeric when both labels parse as numbers).
Coding binary_coding(TabularDataset& data, std::size_t col, const ImputationSpec& spec) {
  std::set<std::string> labels;
  bool zero_one = true;
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    if (data.is_missing(col, r)) continue;
    labels.insert(data.text(col, r));
    const double v = data.values(col)[r];
    if (!(v == 0.0 || v == 1.0)) zero_one = false;
  }
  Coding c;
  if (zero_one) return c;
  if (labels.size() > 2)
    throw ValidationError("spec '" + spec.name + "': binary target '" + spec.target + "' has " +
                          std::to_string(labels.size()) + " distinct values");
  std::vector<std::string> sorted(labels.begin(), labels.end());
  bool numeric = true;
  for (std::size_t r = 0; r < data.n_rows(); ++r)
    if (!data.is_missing(col, r) && std::isnan(data.values(col)[r])) numeric = false;
  if (numeric && sorted.size() == 2) {
    std::sort(sorted.begin(), sorted.end(),
              [&](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); });
  }
  c.recoded = true;
  c.label0 = sorted.at(0);
  c.label1 = sorted.size() > 1 ? sorted[1] : sorted[0] + "_other";
  std::vector<double> codes(data.n_rows(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < data.n_rows(); ++r)
    if (!data.is_missing(col, r)) codes[r] = data.text(col, r) == c.label1 ? 1.0 : 0.0;
  data.set_numeric_view(col, std::move(codes));
  return c;
}

struct Columns {
  std::size_t target;
  std::vector<std::size_t> outcome;
  std::vector<std::size_t> selection;
};

Columns resolve_columns(const TabularDataset& data, const ImputationSpec& spec) {
  Columns c;
  c.target = data.column_index(spec.target);
  for (const auto& n : spec.outcome_predictors) c.outcome.push_back(data.column_index(n));
  if (spec.uses_selection())
    for (const auto& n : spec.selection_predictors) c.selection.push_back(data.column_index(n));
  return c;
}

ClusterData build_cluster(const TabularDataset& data, const std::vector<char>& missing,
                          const std::vector<std::size_t>& rows, const Columns& cols,
                          const std::string& label) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  ClusterData d;
  d.cluster_id = label;
  d.x_outcome.resize(n, static_cast<Eigen::Index>(cols.outcome.size() + 1));
  d.x_selection.resize(n, cols.selection.empty() ? 0 : static_cast<Eigen::Index>(cols.selection.size() + 1));
  d.y.resize(n);
  d.r.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t row = rows[static_cast<std::size_t>(i)];
    d.x_outcome(i, 0) = 1.0;
    for (std::size_t k = 0; k < cols.outcome.size(); ++k)
      d.x_outcome(i, static_cast<Eigen::Index>(k + 1)) = data.values(cols.outcome[k])[row];
    if (!cols.selection.empty()) {
      d.x_selection(i, 0) = 1.0;
      for (std::size_t k = 0; k < cols.selection.size(); ++k)
        d.x_selection(i, static_cast<Eigen::Index>(k + 1)) = data.values(cols.selection[k])[row];
    }
    d.r(i) = missing[row] ? 0 : 1;
    d.y(i) = missing[row] ? std::numeric_limits<double>::quiet_NaN() : data.values(cols.target)[row];
  }
  return d;
}

Eigen::Index spec_p(const ImputationSpec& s) { return static_cast<Eigen::Index>(s.outcome_predictors.size() + 1); }
Eigen::Index spec_q(const ImputationSpec& s) {
  return s.uses_selection() ? static_cast<Eigen::Index>(s.selection_predictors.size() + 1) : 0;
}

ClusterPartition partition(const Design& design, const std::vector<char>& missing, const ImputationSpec& spec) {
  ClusterPartition part;
  const Eigen::Index min_obs = minimum_observed(spec_p(spec), spec_q(spec));
  for (std::size_t i = 0; i < design.labels.size(); ++i) {
    ClusterReport rep;
    rep.cluster = design.labels[i];
    rep.n_rows = design.rows[i].size();
    for (std::size_t row : design.rows[i]) rep.n_observed += missing[row] ? 0 : 1;
    if (rep.n_observed == 0) {
      rep.status = ClusterStatus::fallback;
      rep.reason = "target systematically missing";
    } else if (static_cast<Eigen::Index>(rep.n_observed) < min_obs) {
      rep.status = ClusterStatus::fallback;
      rep.reason = "observed rows " + std::to_string(rep.n_observed) + " below minimum " + std::to_string(min_obs);
    }
    (rep.status == ClusterStatus::estimable ? part.estimable : part.fallback).push_back(rep.cluster);
    part.clusters.push_back(std::move(rep));
  }
  return part;
}

struct Prepared {
  ImputationSpec spec;
  Columns cols;
  Design design;
  std::vector<ClusterData> data;
  std::vector<std::optional<ClusterFit>> fits;
  std::optional<MarginalModel> marginal;
  std::optional<ClusterFit> single;
  SpecReport report;
};

void fill_rho(ClusterReport& rep, const ClusterFit& fit) {
  if (!fit.layout.has_rho) return;
  const Eigen::Index k = fit.layout.rho_index();
  const double tau = fit.params.atanh_rho;
  const double se = std::sqrt(std::max(fit.vcov(k, k), 0.0));
  rep.rho_hat = std::tanh(tau);
  rep.rho_lower = std::tanh(tau - 1.959963984540054 * se);
  rep.rho_upper = std::tanh(tau + 1.959963984540054 * se);
}

Prepared prepare(const TabularDataset& current, const std::vector<char>& missing, const ImputationSpec& spec,
                 const EngineOptions& options) {
  Prepared p;
  p.spec = spec;
  p.cols = resolve_columns(current, spec);
  p.design = cluster_design(current, spec.cluster_column);
  p.report.spec_name = spec.name;
  p.report.target = spec.target;
  p.report.method = spec.method;
  for (char m : missing) p.report.n_missing += m ? 1 : 0;

  const std::size_t nclust = p.design.labels.size();
  for (std::size_t i = 0; i < nclust; ++i)
    p.data.push_back(build_cluster(current, missing, p.design.rows[i], p.cols, p.design.labels[i]));

  ClusterPartition part = partition(p.design, missing, spec);
  FitOptions fo;
  fo.outcome_only = !spec.uses_selection();

  if (spec.method == ImputationMethod::heckman_1l) {
    std::vector<std::size_t> all(current.n_rows());
    for (std::size_t r = 0; r < all.size(); ++r) all[r] = r;
    const ClusterData pooled = build_cluster(current, missing, all, p.cols, "(all clusters)");
    FitOutcome out = fit_cluster(pooled, spec.family, fo);
    if (auto* ne = std::get_if<NonEstimable>(&out))
      throw ImputationError("spec '" + spec.name + "': single-level Heckman model not estimable: " + ne->reason);
    p.single = std::get<ClusterFit>(out);
    p.report.clusters = part.clusters;
    return p;
  }

  if (part.estimable.empty())
    throw ImputationError("spec '" + spec.name + "': no cluster has enough observed data for '" + spec.target + "'");

  p.fits.resize(nclust);
  std::vector<FitOutcome> outcomes(nclust, NonEstimable{});
  parallel_for(nclust, options.workers, [&](std::size_t i) {
    if (part.clusters[i].status != ClusterStatus::estimable) return;
    outcomes[i] = fit_cluster(p.data[i], spec.family, fo);
  });
  std::vector<ClusterFit> usable;
  for (std::size_t i = 0; i < nclust; ++i) {
    ClusterReport& rep = part.clusters[i];
    if (rep.status != ClusterStatus::estimable) continue;
    if (auto* cf = std::get_if<ClusterFit>(&outcomes[i])) {
      p.fits[i] = *cf;
      usable.push_back(*cf);
      fill_rho(rep, *cf);
    } else {
      rep.status = ClusterStatus::fallback;
      rep.reason = "not estimable: " + std::get<NonEstimable>(outcomes[i]).reason;
    }
  }
  p.report.clusters = part.clusters;
  if (usable.size() < 2) {
    std::string detail;
    for (const auto& rep : part.clusters)
      if (rep.status == ClusterStatus::fallback) detail += "\n  cluster " + rep.cluster + ": " + rep.reason;
    throw ImputationError("spec '" + spec.name + "': only " + std::to_string(usable.size()) +
                          " estimable cluster(s), at least 2 are needed to pool" + detail);
  }
  try {
    p.marginal = pool_heckman(usable, options.psi_structure);
  } catch (const PoolingError& e) {
    throw ImputationError("spec '" + spec.name + "': " + e.what());
  }
  return p;
}

void write_imputed(TabularDataset& out, std::size_t col, std::size_t row, double v, Family family,
                   const Coding& coding) {
  if (family == Family::binary) {
    const bool one = v > 0.5;
    out.set_cell(col, row, one ? coding.label1 : coding.label0, one ? 1.0 : 0.0);
  } else {
    out.set_value(col, row, v);
  }
}

void impute_rows(const ClusterData& cd, const std::vector<std::size_t>& rows, const std::vector<char>& missing,
                 const DrawnClusterParams& params, Family family, RngStream& rng, TabularDataset& out,
                 std::size_t target_col, const Coding& coding, int* fallbacks) {
  std::vector<Eigen::Index> idx;
  for (std::size_t k = 0; k < rows.size(); ++k)
    if (missing[rows[k]]) idx.push_back(static_cast<Eigen::Index>(k));
  if (idx.empty()) return;
  const auto nm = static_cast<Eigen::Index>(idx.size());
  Matrix xo(nm, cd.x_outcome.cols()), xs(nm, cd.x_selection.cols());
  for (Eigen::Index k = 0; k < nm; ++k) {
    xo.row(k) = cd.x_outcome.row(idx[static_cast<std::size_t>(k)]);
    if (xs.cols() > 0) xs.row(k) = cd.x_selection.row(idx[static_cast<std::size_t>(k)]);
  }
  const Vector draws = family == Family::continuous ? impute_continuous(xo, xs, params, rng)
                                                    : impute_binary(xo, xs, params, rng, fallbacks);
  for (Eigen::Index k = 0; k < nm; ++k)
    write_imputed(out, target_col, rows[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])], draws(k),
                  family, coding);
}

double max_projection(const DrawnMarginal& m) {
  double d = m.block_o.projection_distance;
  if (m.block_s) d = std::max(d, m.block_s->projection_distance);
  if (m.log_sigma) d = std::max(d, m.log_sigma->projection_distance);
  if (m.atanh_rho) d = std::max(d, m.atanh_rho->projection_distance);
  return d;
}

struct DrawDiagnostics {
  double projection = 0.0;
  int binary_fallbacks = 0;
};

// One imputation of the spec's missing cells into `out`.
DrawDiagnostics draw_into(const Prepared& p, const std::vector<char>& missing, TabularDataset& out,
                          const Coding& coding, const RngStream& rng) {
  DrawDiagnostics diag;
  const Family family = p.spec.family;
  if (p.single) {
    const ClusterFit& fit = *p.single;
    RngStream prng = rng.child(0);
    const Vector theta = draw_mvnormal(prng, fit.params.pack(fit.layout), fit.vcov);
    const HeckmanParams hp = HeckmanParams::unpack(fit.layout, theta);
    DrawnClusterParams dp;
    dp.cluster_id = fit.cluster_id;
    dp.beta_o_star = hp.beta_o;
    dp.beta_s_star = hp.beta_s;
    if (fit.layout.has_sigma()) dp.sigma_star = hp.sigma();
    dp.rho_star = fit.layout.has_rho ? hp.rho() : 0.0;
    for (std::size_t i = 0; i < p.design.labels.size(); ++i) {
      RngStream crng = rng.child({1, i});
      impute_rows(p.data[i], p.design.rows[i], missing, dp, family, crng, out, p.cols.target, coding,
                  &diag.binary_fallbacks);
    }
    return diag;
  }

  RngStream mrng = rng.child(0);
  const DrawnMarginal marginal = draw_marginal(*p.marginal, mrng);
  diag.projection = max_projection(marginal);
  for (std::size_t i = 0; i < p.design.labels.size(); ++i) {
    bool any_missing = false;
    for (std::size_t row : p.design.rows[i]) any_missing = any_missing || missing[row];
    if (!any_missing) continue;
    RngStream crng = rng.child({1, i});
    const ClusterFit* fit = p.fits[i] ? &*p.fits[i] : nullptr;
    const DrawnClusterParams params = draw_cluster(fit, marginal, crng, p.design.labels[i]);
    impute_rows(p.data[i], p.design.rows[i], missing, params, family, crng, out, p.cols.target, coding,
                &diag.binary_fallbacks);
  }
  return diag;
}

std::vector<char> missing_mask(const TabularDataset& data, std::size_t col) {
  std::vector<char> m(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) m[r] = data.is_missing(col, r) ? 1 : 0;
  return m;
}

void check_positive(int m, const char* what) {
  if (m < 1) throw ValidationError(std::string(what) + " must be at least 1");
}

}  // namespace

const char* to_string(ImputationMethod m) {
  switch (m) {
    case ImputationMethod::heckman_2l: return "heckman_2l";
    case ImputationMethod::mar_2l: return "mar_2l";
    case ImputationMethod::heckman_1l: return "heckman_1l";
  }
  return "?";
}

ImputationMethod imputation_method_from_string(const std::string& s) {
  if (s == "heckman_2l") return ImputationMethod::heckman_2l;
  if (s == "mar_2l") return ImputationMethod::mar_2l;
  if (s == "heckman_1l") return ImputationMethod::heckman_1l;
  throw ValidationError("unknown imputation method '" + s + "' (expected heckman_2l, mar_2l or heckman_1l)");
}

void validate_spec(const ImputationSpec& spec) {
  const std::string who = "spec '" + spec.name + "'";
  if (spec.target.empty()) throw ValidationError(who + ": target is empty");
  if (spec.cluster_column.empty()) throw ValidationError(who + ": cluster column is empty");
  auto contains = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  if (contains(spec.outcome_predictors, spec.target) || contains(spec.selection_predictors, spec.target))
    throw ValidationError(who + ": target '" + spec.target + "' appears among its own predictors");
  if (contains(spec.outcome_predictors, spec.cluster_column) ||
      contains(spec.selection_predictors, spec.cluster_column))
    throw ValidationError(who + ": cluster column used as a predictor");
  if (spec.uses_selection()) {
    bool has_erv = false;
    for (const auto& s : spec.selection_predictors) has_erv = has_erv || !contains(spec.outcome_predictors, s);
    if (!has_erv)
      throw ValidationError(who + ": Heckman methods need an exclusion restriction variable (a selection "
                                  "predictor that is not an outcome predictor)");
  }
}

void validate_spec(const ImputationSpec& spec, const TabularDataset& data,
                   const std::vector<std::string>& imputed_columns) {
  validate_spec(spec);
  const std::string who = "spec '" + spec.name + "'";
  auto need = [&](const std::string& col, bool must_be_complete) {
    if (!data.has_column(col)) throw ValidationError(who + ": column '" + col + "' not found in data");
    const std::size_t c = data.column_index(col);
    const bool imputed = std::find(imputed_columns.begin(), imputed_columns.end(), col) != imputed_columns.end();
    if (must_be_complete && !imputed) {
      if (data.missing_count(c) > 0)
        throw ValidationError(who + ": predictor '" + col + "' has missing values and is not imputed");
      for (std::size_t r = 0; r < data.n_rows(); ++r)
        if (std::isnan(data.values(c)[r]))
          throw ValidationError(who + ": predictor '" + col + "' is not numeric (row " + std::to_string(r + 1) + ")");
    }
  };
  need(spec.target, false);
  need(spec.cluster_column, false);
  for (const auto& c : spec.outcome_predictors) need(c, true);
  if (spec.uses_selection())
    for (const auto& c : spec.selection_predictors) need(c, true);
  if (spec.family == Family::continuous) {
    const std::size_t c = data.column_index(spec.target);
    for (std::size_t r = 0; r < data.n_rows(); ++r)
      if (!data.is_missing(c, r) && std::isnan(data.values(c)[r]))
        throw ValidationError(who + ": continuous target '" + spec.target + "' has a non-numeric value at row " +
                              std::to_string(r + 1));
  }
}

ClusterPartition classify_clusters(const TabularDataset& data, const ImputationSpec& spec) {
  validate_spec(spec);
  const Design design = cluster_design(data, spec.cluster_column);
  ClusterPartition part = partition(design, missing_mask(data, data.column_index(spec.target)), spec);
  if (part.estimable.empty())
    throw ImputationError("spec '" + spec.name + "': every cluster falls back; nothing to pool");
  return part;
}

MIDataset impute_univariate(const TabularDataset& data, const ImputationSpec& spec, int m, const RngStream& rng,
                            const EngineOptions& options) {
  check_positive(m, "m");
  validate_spec(spec, data);
  TabularDataset base = data;
  const std::size_t col = base.column_index(spec.target);
  Coding coding;
  if (spec.family == Family::binary) coding = binary_coding(base, col, spec);
  const std::vector<char> missing = missing_mask(data, col);

  MIDataset mi;
  mi.m = m;
  mi.seed = rng.master_seed();
  mi.rng_path = rng.path();
  mi.specs = {spec};
  mi.completed.resize(static_cast<std::size_t>(m));

  SpecReport report;
  const bool any_missing = std::any_of(missing.begin(), missing.end(), [](char c) { return c != 0; });
  if (!any_missing) {
    report.spec_name = spec.name;
    report.target = spec.target;
    report.method = spec.method;
    report.clusters = partition(cluster_design(data, spec.cluster_column), missing, spec).clusters;
    for (auto& t : mi.completed) t = data;
  } else {
    const Prepared prepared = prepare(base, missing, spec, options);
    report = prepared.report;
    std::vector<DrawDiagnostics> diags(static_cast<std::size_t>(m));
    parallel_for(static_cast<std::size_t>(m), options.workers, [&](std::size_t k) {
      TabularDataset out = base;
      diags[k] = draw_into(prepared, missing, out, coding, rng.child(k));
      mi.completed[k] = std::move(out);
    });
    for (const auto& d : diags) {
      report.projection_distances.push_back(d.projection);
      report.binary_probability_fallbacks += d.binary_fallbacks;
    }
  }
  if (coding.recoded) report.binary_coding = std::make_pair(coding.label0, coding.label1);
  mi.reports.push_back(std::move(report));
  return mi;
}

MIDataset impute_chained(const TabularDataset& data, const std::vector<ImputationSpec>& specs, int m,
                         int iterations, const RngStream& rng, const EngineOptions& options) {
  check_positive(m, "m");
  if (iterations < 0) throw ValidationError("iterations must be non-negative");
  if (specs.empty()) throw ValidationError("no imputation specs given");
  std::vector<std::string> targets;
  for (const auto& s : specs) {
    if (std::find(targets.begin(), targets.end(), s.target) != targets.end())
      throw ValidationError("column '" + s.target + "' is the target of more than one spec");
    targets.push_back(s.target);
  }
  for (const auto& s : specs) validate_spec(s, data, targets);

  TabularDataset base = data;
  std::vector<std::size_t> cols;
  std::vector<Coding> codings;
  std::vector<std::vector<char>> masks;
  for (const auto& s : specs) {
    const std::size_t c = base.column_index(s.target);
    cols.push_back(c);
    codings.push_back(s.family == Family::binary ? binary_coding(base, c, s) : Coding{});
    masks.push_back(missing_mask(data, c));
  }

  MIDataset mi;
  mi.m = m;
  mi.seed = rng.master_seed();
  mi.rng_path = rng.path();
  mi.iterations = iterations;
  mi.specs = specs;
  mi.completed.resize(static_cast<std::size_t>(m));
  std::vector<std::vector<SpecReport>> chain_reports(static_cast<std::size_t>(m));

  EngineOptions inner = options;
  inner.workers = 1;
  parallel_for(static_cast<std::size_t>(m), options.workers, [&](std::size_t k) {
    TabularDataset state = base;
    // Start from draws of the observed values within each cluster.
    for (std::size_t j = 0; j < specs.size(); ++j) {
      RngStream init = rng.child({k, 0, j});
      const Design design = cluster_design(state, specs[j].cluster_column);
      std::vector<std::size_t> all_obs;
      for (std::size_t r = 0; r < state.n_rows(); ++r)
        if (!masks[j][r]) all_obs.push_back(r);
      if (all_obs.empty())
        throw ImputationError("spec '" + specs[j].name + "': target '" + specs[j].target + "' is entirely missing");
      for (const auto& rows : design.rows) {
        std::vector<std::size_t> obs;
        for (std::size_t r : rows)
          if (!masks[j][r]) obs.push_back(r);
        const auto& pool = obs.empty() ? all_obs : obs;
        for (std::size_t r : rows) {
          if (!masks[j][r]) continue;
          const std::size_t src = pool[init.index(pool.size())];
          state.set_cell(cols[j], r, state.text(cols[j], src), state.values(cols[j])[src]);
        }
      }
    }
    std::vector<SpecReport> reports(specs.size());
    for (std::size_t j = 0; j < specs.size(); ++j) {
      reports[j].spec_name = specs[j].name;
      reports[j].target = specs[j].target;
      reports[j].method = specs[j].method;
    }
    for (int t = 0; t < iterations; ++t) {
      for (std::size_t j = 0; j < specs.size(); ++j) {
        try {
          const Prepared prepared = prepare(state, masks[j], specs[j], inner);
          const DrawDiagnostics d =
              draw_into(prepared, masks[j], state, codings[j], rng.child({k, static_cast<std::size_t>(t) + 1, j}));
          const auto projections = std::move(reports[j].projection_distances);
          const int fallbacks = reports[j].binary_probability_fallbacks;
          reports[j] = prepared.report;
          reports[j].projection_distances = projections;
          reports[j].projection_distances.push_back(d.projection);
          reports[j].binary_probability_fallbacks = fallbacks + d.binary_fallbacks;
        } catch (const ImputationError& e) {
          throw ImputationError("chain " + std::to_string(k + 1) + ", iteration " + std::to_string(t + 1) + ": " +
                                e.what());
        }
      }
    }
    mi.completed[k] = std::move(state);
    chain_reports[k] = std::move(reports);
  });

  // Report the first chain's final cluster classification; diagnostics from all chains.
  for (std::size_t j = 0; j < specs.size(); ++j) {
    SpecReport rep = chain_reports[0][j];
    rep.projection_distances.clear();
    rep.binary_probability_fallbacks = 0;
    for (const auto& cr : chain_reports) {
      rep.projection_distances.insert(rep.projection_distances.end(), cr[j].projection_distances.begin(),
                                      cr[j].projection_distances.end());
      rep.binary_probability_fallbacks += cr[j].binary_probability_fallbacks;
    }
    rep.n_missing = 0;
    for (char c : masks[j]) rep.n_missing += c ? 1 : 0;
    if (codings[j].recoded) rep.binary_coding = std::make_pair(codings[j].label0, codings[j].label1);
    mi.reports.push_back(std::move(rep));
  }
  return mi;
}

}  // namespace heckmi
