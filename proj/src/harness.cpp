#include "cgi/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <set>

#include "cgi/error.hpp"

namespace cgi {

namespace {

using json = nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  Rng rng = make_stream(seed, tag);
  return rng();
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, value] : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return key == k; });
    if (!ok) throw ValidationError(std::string("unknown key '") + key + "' in " + where);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  RunConfig c;
  try {
    reject_unknown(j,
                   {"seed", "hidden", "dropout", "lr", "l2_lambda", "l2_all_blocks", "alpha",
                    "alpha_grid", "k_prop", "epochs", "patience", "tau", "k_mc", "svm", "paths",
                    "synthetic", "perturb", "choice", "lway", "analyses", "threads"},
                   "run config");
    read_opt(j, "seed", c.seed);
    read_opt(j, "hidden", c.train.hidden);
    read_opt(j, "dropout", c.train.dropout);
    read_opt(j, "lr", c.train.lr);
    read_opt(j, "l2_lambda", c.train.l2_lambda);
    read_opt(j, "l2_all_blocks", c.train.l2_all_blocks);
    read_opt(j, "alpha", c.train.alpha);
    read_opt(j, "alpha_grid", c.alpha_grid);
    read_opt(j, "k_prop", c.train.k_prop);
    read_opt(j, "epochs", c.train.epochs);
    read_opt(j, "patience", c.train.patience);
    read_opt(j, "tau", c.tau);
    read_opt(j, "k_mc", c.k_mc);
    read_opt(j, "analyses", c.analyses);
    read_opt(j, "threads", c.threads);
    if (j.contains("svm")) {
      const auto& s = j.at("svm");
      reject_unknown(s, {"c_grid", "gamma_grid", "folds", "tolerance"}, "svm");
      read_opt(s, "c_grid", c.svm.c_grid);
      read_opt(s, "gamma_grid", c.svm.gamma_grid);
      read_opt(s, "folds", c.svm.folds);
      read_opt(s, "tolerance", c.svm.smo.tolerance);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"edges", "features", "labels", "splits", "out", "num_classes"}, "paths");
      if (p.contains("edges") || p.contains("features") || p.contains("labels") ||
          p.contains("splits")) {
        DataPaths d;
        d.edges = p.at("edges").get<std::string>();
        d.features = p.at("features").get<std::string>();
        d.labels = p.at("labels").get<std::string>();
        d.splits = p.at("splits").get<std::string>();
        read_opt(p, "num_classes", d.num_classes);
        c.data = d;
      }
      if (p.contains("out")) c.out_dir = p.at("out").get<std::string>();
    }
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      reject_unknown(s,
                     {"nodes", "classes", "feature_dim", "avg_degree", "homophily",
                      "feature_signal", "train_per_class", "valid", "test", "seed"},
                     "synthetic");
      PlantedPartitionConfig pp;
      pp.seed = c.seed;
      read_opt(s, "nodes", pp.nodes);
      read_opt(s, "classes", pp.classes);
      read_opt(s, "feature_dim", pp.feature_dim);
      read_opt(s, "avg_degree", pp.avg_degree);
      read_opt(s, "homophily", pp.homophily);
      read_opt(s, "feature_signal", pp.feature_signal);
      read_opt(s, "train_per_class", pp.train_per_class);
      read_opt(s, "valid", pp.valid);
      read_opt(s, "test", pp.test);
      read_opt(s, "seed", pp.seed);
      c.synthetic = pp;
    }
    if (j.contains("perturb")) {
      const auto& p = j.at("perturb");
      reject_unknown(p, {"ratio", "node_fraction", "both_endpoints"}, "perturb");
      read_opt(p, "ratio", c.perturb.ratio);
      read_opt(p, "node_fraction", c.perturb.node_fraction);
      read_opt(p, "both_endpoints", c.perturb.both_endpoints);
    }
    if (j.contains("choice")) {
      const auto& s = j.at("choice");
      reject_unknown(s, {"mode", "nodes", "min_rows"}, "choice");
      if (s.contains("mode")) {
        const auto mode = s.at("mode").get<std::string>();
        if (mode == "conflict_only") c.dataset_mode = DatasetMode::kConflictOnly;
        else if (mode == "literal") c.dataset_mode = DatasetMode::kLiteral;
        else throw ValidationError("choice.mode must be conflict_only or literal");
      }
      if (s.contains("nodes")) {
        const auto nodes = s.at("nodes").get<std::string>();
        if (nodes == "valid") c.choice_nodes = ChoiceNodes::kValid;
        else if (nodes == "train_valid") c.choice_nodes = ChoiceNodes::kTrainValid;
        else throw ValidationError("choice.nodes must be valid or train_valid");
      }
      read_opt(s, "min_rows", c.min_choice_rows);
    }
    if (j.contains("lway")) {
      const auto& s = j.at("lway");
      reject_unknown(s, {"reg_alpha", "lr", "epochs"}, "lway");
      read_opt(s, "reg_alpha", c.lway.reg_alpha);
      read_opt(s, "lr", c.lway.lr);
      read_opt(s, "epochs", c.lway.epochs);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  if (c.k_mc < 2) throw ValidationError("k_mc must be at least 2");
  if (!(c.tau >= 0.0 && c.tau < 1.0)) throw ValidationError("tau must lie in [0, 1)");
  c.train.seed = derive_seed(c.seed, 1);
  c.svm.seed = derive_seed(c.seed, 3);
  c.lway.seed = derive_seed(c.seed, 4);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["hidden"] = c.train.hidden;
  j["dropout"] = c.train.dropout;
  j["lr"] = c.train.lr;
  j["l2_lambda"] = c.train.l2_lambda;
  j["l2_all_blocks"] = c.train.l2_all_blocks;
  j["alpha"] = c.train.alpha;
  if (!c.alpha_grid.empty()) j["alpha_grid"] = c.alpha_grid;
  j["k_prop"] = c.train.k_prop;
  j["epochs"] = c.train.epochs;
  j["patience"] = c.train.patience;
  j["tau"] = c.tau;
  j["k_mc"] = c.k_mc;
  j["svm"] = {{"c_grid", c.svm.c_grid},
              {"gamma_grid", c.svm.gamma_grid},
              {"folds", c.svm.folds},
              {"tolerance", c.svm.smo.tolerance}};
  j["choice"] = {{"mode", c.dataset_mode == DatasetMode::kConflictOnly ? "conflict_only" : "literal"},
                 {"nodes", c.choice_nodes == ChoiceNodes::kValid ? "valid" : "train_valid"},
                 {"min_rows", c.min_choice_rows}};
  j["lway"] = {{"reg_alpha", c.lway.reg_alpha}, {"lr", c.lway.lr}, {"epochs", c.lway.epochs}};
  if (c.data) {
    j["paths"] = {{"edges", c.data->edges.string()},
                  {"features", c.data->features.string()},
                  {"labels", c.data->labels.string()},
                  {"splits", c.data->splits.string()},
                  {"num_classes", c.data->num_classes}};
  }
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"nodes", s.nodes},
                      {"classes", s.classes},
                      {"feature_dim", s.feature_dim},
                      {"avg_degree", s.avg_degree},
                      {"homophily", s.homophily},
                      {"feature_signal", s.feature_signal},
                      {"train_per_class", s.train_per_class},
                      {"valid", s.valid},
                      {"test", s.test},
                      {"seed", s.seed}};
  }
  j["perturb"] = {{"ratio", c.perturb.ratio},
                  {"node_fraction", c.perturb.node_fraction},
                  {"both_endpoints", c.perturb.both_endpoints}};
  j["analyses"] = c.analyses;
  return j;
}

Graph load_config_graph(const RunConfig& config) {
  Graph g;
  if (config.data) {
    const auto& d = *config.data;
    g = load_graph(d.edges, d.features, d.labels, d.splits, d.num_classes);
  } else if (config.synthetic) {
    g = make_planted_partition(*config.synthetic);
  } else {
    throw ValidationError("config names neither data paths nor a synthetic graph");
  }
  if (config.perturb.ratio > 0.0) {
    InjectionOptions opt;
    opt.ratio = config.perturb.ratio;
    opt.node_fraction = config.perturb.node_fraction;
    opt.both_endpoints_selected = config.perturb.both_endpoints;
    opt.seed = derive_seed(config.seed, 5);
    g = inject_cross_category_edges(g, opt);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Analyses

std::vector<int> rank_order(std::span<const double> scores, SortOrder order) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return order == SortOrder::kAscending ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  return idx;
}

namespace {

std::vector<int> group_bounds(std::size_t n, int groups) {
  std::vector<int> bounds(groups + 1, 0);
  const auto base = static_cast<int>(n / groups);
  const auto extra = static_cast<int>(n % groups);
  for (int g = 0; g < groups; ++g) bounds[g + 1] = bounds[g] + base + (g < extra ? 1 : 0);
  return bounds;
}

}  // namespace

std::vector<GroupStat> decile_analysis(std::span<const double> scores,
                                       std::span<const char> correct, int groups,
                                       SortOrder order) {
  if (scores.size() != correct.size()) {
    throw ValidationError("scores and correctness differ in length");
  }
  if (groups < 1) throw ValidationError("group count must be positive");
  if (scores.size() < static_cast<std::size_t>(groups)) {
    throw ValidationError("fewer nodes (" + std::to_string(scores.size()) + ") than groups (" +
                          std::to_string(groups) + ")");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite score in decile analysis");
  }
  const auto ranked = rank_order(scores, order);
  const auto bounds = group_bounds(scores.size(), groups);
  std::vector<GroupStat> out(groups);
  for (int g = 0; g < groups; ++g) {
    int hits = 0;
    double total = 0.0;
    for (int k = bounds[g]; k < bounds[g + 1]; ++k) {
      hits += correct[ranked[k]] ? 1 : 0;
      total += scores[ranked[k]];
    }
    out[g].size = bounds[g + 1] - bounds[g];
    out[g].accuracy = static_cast<double>(hits) / out[g].size;
    out[g].mean_score = total / out[g].size;
  }
  return out;
}

Matrix overlap_matrix(std::span<const int> rank_a, std::span<const int> rank_b, int groups) {
  if (rank_a.size() != rank_b.size()) throw ValidationError("rankings differ in length");
  if (groups < 1 || rank_a.size() < static_cast<std::size_t>(groups)) {
    throw ValidationError("need at least one node per group");
  }
  std::set<int> set_a(rank_a.begin(), rank_a.end());
  std::set<int> set_b(rank_b.begin(), rank_b.end());
  if (set_a.size() != rank_a.size() || set_b.size() != rank_b.size()) {
    throw ValidationError("rankings must not repeat nodes");
  }
  if (set_a != set_b) throw ValidationError("rankings cover different node sets");

  const auto bounds = group_bounds(rank_a.size(), groups);
  std::map<int, int> group_b;
  for (int g = 0; g < groups; ++g) {
    for (int k = bounds[g]; k < bounds[g + 1]; ++k) group_b[rank_b[k]] = g;
  }
  Matrix m = Matrix::Zero(groups, groups);
  for (int g = 0; g < groups; ++g) {
    for (int k = bounds[g]; k < bounds[g + 1]; ++k) m(g, group_b.at(rank_a[k])) += 1.0;
    m.row(g) /= static_cast<double>(bounds[g + 1] - bounds[g]);
  }
  return m;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ValidationError("spearman needs two equally long samples of size >= 2");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double oracle_bound(const PredictionBundle& bundle, std::span<const int> labels,
                    std::span<const int> eval_set) {
  if (eval_set.empty()) return 0.0;
  std::size_t hits = 0;
  for (int i : eval_set) {
    if (labels[i] == kUnlabeled) throw ValidationError("oracle evaluation on an unlabeled node");
    hits += (bundle.z_hat[i] == labels[i] || bundle.z_self[i] == labels[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

ChoiceEvalSet conflict_eval_set(const PredictionBundle& bundle,
                                const std::vector<FactorVector>& factors,
                                std::span<const int> labels, std::span<const int> nodes) {
  ChoiceEvalSet eval;
  for (int i : nodes) {
    if (!bundle.conflict(i)) continue;
    eval.factors.push_back(factors.at(i));
    eval.hat_correct.push_back(bundle.z_hat[i] == labels[i]);
    eval.self_correct.push_back(bundle.z_self[i] == labels[i]);
  }
  return eval;
}

std::vector<std::vector<std::string>> single_factor_rounds() {
  std::vector<std::vector<std::string>> rounds;
  for (auto name : FactorVector::kNames) rounds.push_back({std::string(name)});
  return rounds;
}

namespace {

double choice_accuracy(const ChoiceModel& model, const ChoiceEvalSet& eval) {
  if (eval.factors.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < eval.factors.size(); ++k) {
    const bool keep = choice_decision(model, eval.factors[k]) >= 0.0;
    hits += (keep ? eval.hat_correct[k] : eval.self_correct[k]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(eval.factors.size());
}

AblationEntry fit_round(const ChoiceDataset& data, const ChoiceEvalSet& eval,
                        const std::vector<std::string>& dropped,
                        const ChoiceTrainOptions& options) {
  std::vector<std::size_t> columns;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < FactorVector::kCount; ++k) {
    const std::string name(FactorVector::kNames[k]);
    if (std::find(dropped.begin(), dropped.end(), name) == dropped.end()) {
      columns.push_back(k);
      names.push_back(name);
    }
  }
  if (columns.empty()) throw ValidationError("an ablation round cannot drop every factor");
  const auto model = train_choice_model(data.features(columns), data.labels(), names, options);
  AblationEntry e;
  e.dropped = dropped;
  if (dropped.empty()) {
    e.name = "all_factors";
  } else {
    e.name = "-";
    for (std::size_t k = 0; k < dropped.size(); ++k) e.name += (k ? "," : "") + dropped[k];
  }
  e.cv_accuracy = model.cv_accuracy;
  e.choice_accuracy = choice_accuracy(model, eval);
  return e;
}

}  // namespace

std::vector<AblationEntry> ablate_factors(const ChoiceDataset& data, const ChoiceEvalSet& eval,
                                          const std::vector<std::vector<std::string>>& rounds,
                                          const ChoiceTrainOptions& options) {
  for (const auto& round : rounds) {
    for (const auto& name : round) {
      if (!factor_index(name)) throw ValidationError("unknown factor '" + name + "'");
    }
  }
  std::vector<AblationEntry> out;
  out.push_back(fit_round(data, eval, {}, options));
  for (const auto& round : rounds) out.push_back(fit_round(data, eval, round, options));

  AblationEntry majority;
  majority.name = "majority_class";
  const auto labels = data.labels();
  majority.cv_accuracy = static_cast<double>(std::count(labels.begin(), labels.end(), 1)) /
                         static_cast<double>(labels.size());
  if (!eval.hat_correct.empty()) {
    majority.choice_accuracy =
        static_cast<double>(std::count(eval.hat_correct.begin(), eval.hat_correct.end(), 1)) /
        static_cast<double>(eval.hat_correct.size());
  }
  out.push_back(majority);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

double relative_improvement(double value, double reference) {
  return reference > 0.0 ? (value - reference) / reference : 0.0;
}

std::vector<int> union_sorted(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out(a);
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config) {
  return run_pipeline(config, load_config_graph(config));
}

PipelineResult run_pipeline(const RunConfig& config, const Graph& graph) {
  Stopwatch clock;
  PipelineResult r;
  r.config = config;
  r.graph = graph;
  const auto& g = r.graph;
  const auto& labels = g.labels();
  const auto& test = g.splits().test;
  MetricsReport& rep = r.report;
  rep.seed = config.seed;
  rep.timing_seconds["load"] = clock.lap();

  // GCN training, optionally selecting the teleport weight on validation.
  std::vector<double> alphas = config.alpha_grid;
  if (alphas.empty()) alphas.push_back(config.train.alpha);
  double best_valid = -1.0;
  for (double alpha : alphas) {
    TrainConfig tc = config.train;
    tc.alpha = alpha;
    TrainResult tr;
    try {
      tr = train(g, tc);
    } catch (const Error& e) {
      throw TrainingError(std::string("[train] ") + e.what());
    }
    const auto z = argmax_rows(forward(tr.model, g, FullMode{}));
    const double valid_acc = accuracy(z, labels, g.splits().valid);
    if (valid_acc > best_valid) {
      best_valid = valid_acc;
      r.model = tr.model;
      r.train_log = tr.log;
      rep.best_epoch = tr.best_epoch;
      rep.epochs_run = static_cast<int>(tr.log.size());
      rep.alpha = alpha;
    }
  }
  rep.timing_seconds["train"] = clock.lap();

  r.bundle = predict_bundle(r.model, g);
  UncertaintyOptions uo;
  uo.k_mc = config.k_mc;
  uo.tau = config.tau;
  uo.master_seed = derive_seed(config.seed, 2);
  uo.threads = config.threads;
  r.uncertainty = estimate_causal_uncertainty(r.model, g, r.bundle.z_hat, uo);
  const auto labeled = union_sorted(g.splits().train, g.splits().valid);
  r.transition = compute_transition_matrix(g, labeled);
  r.factors = extract_all_factors(r.bundle, r.uncertainty.graph_var, r.transition);
  rep.timing_seconds["intervention"] = clock.lap();

  // Choice model.
  const std::vector<int> choice_nodes =
      config.choice_nodes == ChoiceNodes::kValid ? g.splits().valid : labeled;
  try {
    r.choice_data =
        build_choice_dataset(r.bundle, r.factors, labels, choice_nodes, config.dataset_mode);
  } catch (const DatasetSparsityError&) {
    r.choice_data = {};
  }
  rep.choice_rows = static_cast<int>(r.choice_data.size());
  const auto y = r.choice_data.labels();
  const bool both_classes = std::count(y.begin(), y.end(), 1) > 0 &&
                            std::count(y.begin(), y.end(), -1) > 0;
  if (rep.choice_rows < config.min_choice_rows) {
    rep.fallback_reason = "choice data has " + std::to_string(rep.choice_rows) +
                          " rows, fewer than " + std::to_string(config.min_choice_rows);
  } else if (!both_classes) {
    rep.fallback_reason = "choice data holds a single class";
  } else {
    std::vector<std::string> names(FactorVector::kNames.begin(), FactorVector::kNames.end());
    try {
      rep.choice_model =
          train_choice_model(r.choice_data.features(), y, std::move(names), config.svm);
    } catch (const Error& e) {
      throw SolverError(std::string("[choice] ") + e.what());
    }
    rep.choice_trained = true;
  }
  rep.timing_seconds["choice"] = clock.lap();

  r.z_cgi = cgi_predict(r.bundle, r.factors, rep.choice_model ? &*rep.choice_model : nullptr);
  r.z_ensemble = ensemble_predict(r.bundle);
  r.z_lway = lway_baseline(r.bundle, labels, choice_nodes, config.lway).predict(r.bundle);
  rep.timing_seconds["baselines"] = clock.lap();

  rep.test_size = static_cast<int>(test.size());
  rep.test.appnp = accuracy(r.bundle.z_hat, labels, test);
  rep.test.self = accuracy(r.bundle.z_self, labels, test);
  rep.test.ensemble = accuracy(r.z_ensemble, labels, test);
  rep.test.lway = accuracy(r.z_lway, labels, test);
  rep.test.cgi = accuracy(r.z_cgi, labels, test);
  rep.test.oracle = oracle_bound(r.bundle, labels, test);
  rep.ri_over_appnp = relative_improvement(rep.test.cgi, rep.test.appnp);
  rep.ri_over_ensemble = relative_improvement(rep.test.cgi, rep.test.ensemble);

  std::vector<int> conflicts;
  for (int i : test) {
    if (r.bundle.conflict(i)) conflicts.push_back(i);
  }
  rep.conflict_count = static_cast<int>(conflicts.size());
  rep.conflict_cgi_accuracy = accuracy(r.z_cgi, labels, conflicts);
  rep.conflict_majority_accuracy = accuracy(r.bundle.z_hat, labels, conflicts);

  if (config.analyses && test.size() >= 10) {
    DecileReport d;
    std::vector<double> gv, conf;
    std::vector<char> correct;
    for (int i : test) {
      gv.push_back(r.factors[i].graph_var);
      conf.push_back(r.factors[i].self_conf);
      correct.push_back(r.bundle.z_hat[i] == labels[i]);
    }
    d.by_graph_var = decile_analysis(gv, correct, 10, SortOrder::kAscending);
    d.by_confidence = decile_analysis(conf, correct, 10, SortOrder::kDescending);
    std::vector<double> idx(10), acc_gv(10), acc_conf(10);
    for (int k = 0; k < 10; ++k) {
      idx[k] = k;
      acc_gv[k] = d.by_graph_var[k].accuracy;
      acc_conf[k] = d.by_confidence[k].accuracy;
    }
    d.graph_var_spearman = spearman(idx, acc_gv);
    d.confidence_spearman = spearman(idx, acc_conf);
    d.overlap = overlap_matrix(rank_order(gv, SortOrder::kAscending),
                               rank_order(conf, SortOrder::kDescending), 10);
    rep.deciles = std::move(d);
    if (rep.choice_trained) {
      rep.ablation = ablate_factors(r.choice_data, conflict_eval_set(r.bundle, r.factors, labels,
                                                                     test),
                                    single_factor_rounds(), config.svm);
    }
    rep.timing_seconds["analyses"] = clock.lap();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reports

json metrics_json(const MetricsReport& rep, const RunConfig& config) {
  json j;
  j["schema"] = "cgi-metrics";
  j["version"] = 1;
  j["seed"] = rep.seed;
  j["config"] = to_json(config);
  j["accuracy"] = {{"appnp", rep.test.appnp},       {"self", rep.test.self},
                   {"ensemble", rep.test.ensemble}, {"lway", rep.test.lway},
                   {"cgi", rep.test.cgi},           {"oracle", rep.test.oracle}};
  j["relative_improvement"] = {{"over_appnp", rep.ri_over_appnp},
                               {"over_ensemble", rep.ri_over_ensemble}};
  j["test_size"] = rep.test_size;
  j["conflicts"] = {{"count", rep.conflict_count},
                    {"cgi_accuracy", rep.conflict_cgi_accuracy},
                    {"majority_accuracy", rep.conflict_majority_accuracy}};
  j["training"] = {{"best_epoch", rep.best_epoch},
                   {"epochs_run", rep.epochs_run},
                   {"alpha", rep.alpha}};
  json choice = {{"trained", rep.choice_trained}, {"rows", rep.choice_rows}};
  if (!rep.fallback_reason.empty()) choice["fallback_reason"] = rep.fallback_reason;
  if (rep.choice_model) {
    const auto& m = *rep.choice_model;
    choice["c"] = m.c_penalty;
    choice["gamma"] = m.gamma;
    choice["cv_accuracy"] = m.cv_accuracy;
    choice["support_vectors"] = m.support_vectors.rows();
    json cv = json::array();
    for (const auto& e : m.cv_table) {
      cv.push_back({{"c", e.c}, {"gamma", e.gamma}, {"accuracy", e.accuracy}});
    }
    choice["cv_table"] = std::move(cv);
  }
  j["choice"] = std::move(choice);
  if (rep.deciles) {
    j["deciles"] = {{"graph_var_spearman", rep.deciles->graph_var_spearman},
                    {"confidence_spearman", rep.deciles->confidence_spearman}};
  }
  if (rep.ablation) {
    json a = json::array();
    for (const auto& e : *rep.ablation) {
      a.push_back({{"name", e.name},
                   {"cv_accuracy", e.cv_accuracy},
                   {"choice_accuracy", e.choice_accuracy}});
    }
    j["ablation"] = std::move(a);
  }
  j["timing"] = rep.timing_seconds;
  return j;
}

void write_losses(std::span<const EpochLog> plain, std::span<const EpochLog> trust,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "run,epoch,train_loss,valid_loss,train_acc,valid_acc\n";
  auto dump = [&](const char* run, std::span<const EpochLog> log) {
    for (const auto& e : log) {
      out << run << ',' << e.epoch << ',' << e.train_loss << ',' << e.valid_loss << ','
          << e.train_acc << ',' << e.valid_acc << '\n';
    }
  };
  dump("plain", plain);
  dump("trust", trust);
  if (!out) throw IoError("write failed: " + path.string());
}

void emit_report(const PipelineResult& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream out(out_dir / "metrics.json");
    if (!out) throw IoError("cannot write " + (out_dir / "metrics.json").string());
    out << metrics_json(r.report, r.config).dump(2) << '\n';
  }
  {
    std::ofstream out(out_dir / "predictions.csv");
    if (!out) throw IoError("cannot write " + (out_dir / "predictions.csv").string());
    out << "node,z_hat,z_self,z_ensemble,z_lway,z_cgi\n";
    for (int i = 0; i < r.bundle.num_nodes(); ++i) {
      out << i << ',' << r.bundle.z_hat[i] << ',' << r.bundle.z_self[i] << ','
          << r.z_ensemble[i] << ',' << r.z_lway[i] << ',' << r.z_cgi[i] << '\n';
    }
  }
  write_factors(r.factors, r.bundle, r.graph, r.choice_data, out_dir / "factors.csv");
  write_losses(r.train_log, {}, out_dir / "losses.csv");
  save_model(r.model, r.config.train, out_dir / "model.json");
  if (r.report.choice_model) save_choice_model(*r.report.choice_model, out_dir / "choice_model.json");
  if (r.report.deciles) {
    const auto& d = *r.report.deciles;
    std::ofstream out(out_dir / "deciles.csv");
    out << std::setprecision(17);
    out << "ranking,group,size,accuracy,mean_score\n";
    auto dump = [&](const char* name, const std::vector<GroupStat>& groups) {
      for (std::size_t k = 0; k < groups.size(); ++k) {
        out << name << ',' << k << ',' << groups[k].size << ',' << groups[k].accuracy << ','
            << groups[k].mean_score << '\n';
      }
    };
    dump("graph_var_asc", d.by_graph_var);
    dump("self_conf_desc", d.by_confidence);
    std::ofstream ov(out_dir / "overlap.csv");
    ov << std::setprecision(17);
    for (Eigen::Index i = 0; i < d.overlap.rows(); ++i) {
      for (Eigen::Index k = 0; k < d.overlap.cols(); ++k) ov << (k ? "," : "") << d.overlap(i, k);
      ov << '\n';
    }
    if (!out || !ov) throw IoError("write failed in " + out_dir.string());
  }
}

// ---------------------------------------------------------------------------

TrustExperiment trust_feature_experiment(const Graph& g, const RunConfig& config,
                                         bool zero_trust_feature) {
  TrustExperiment out;
  const auto& labels = g.labels();
  const auto& test = g.splits().test;
  TrainConfig tc = config.train;
  if (!config.alpha_grid.empty()) tc.alpha = config.alpha_grid.front();

  const auto plain = train(g, tc);
  const auto bundle = predict_bundle(plain.model, g);
  out.plain_log = plain.log;
  out.plain = accuracy(bundle.z_hat, labels, test);
  out.bound = oracle_bound(bundle, labels, test);

  Matrix x(g.num_nodes(), g.feature_dim() + 1);
  x.leftCols(g.feature_dim()) = g.features();
  for (int i = 0; i < g.num_nodes(); ++i) {
    double p = 0.0;
    if (!zero_trust_feature && labels[i] != kUnlabeled && bundle.conflict(i)) {
      p = bundle.z_hat[i] == labels[i] ? 1.0 : -1.0;
    }
    x(i, g.feature_dim()) = p;
  }
  const Graph with_trust = g.with_features(std::move(x));
  const auto trusted = train(with_trust, tc);
  out.trust_log = trusted.log;
  out.trust = accuracy(argmax_rows(forward(trusted.model, with_trust, FullMode{})), labels, test);
  return out;
}

json summarize_runs(const std::vector<json>& metrics) {
  if (metrics.empty()) throw ValidationError("no runs to summarize");
  std::map<std::string, std::vector<double>> values;
  std::function<void(const json&, const std::string&)> walk = [&](const json& j,
                                                                  const std::string& prefix) {
    for (const auto& [key, v] : j.items()) {
      if (prefix.empty() && (key == "config" || key == "timing" || key == "seed" ||
                             key == "version" || key == "ablation")) {
        continue;
      }
      const std::string path = prefix.empty() ? key : prefix + "." + key;
      if (v.is_object()) walk(v, path);
      else if (v.is_number()) values[path].push_back(v.get<double>());
    }
  };
  json seeds = json::array();
  for (const auto& m : metrics) {
    walk(m, "");
    if (m.contains("seed")) seeds.push_back(m.at("seed"));
  }
  json mean, stdev;
  for (const auto& [path, xs] : values) {
    const double mu = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double ss = 0.0;
    for (double x : xs) ss += (x - mu) * (x - mu);
    mean[path] = mu;
    stdev[path] = std::sqrt(ss / xs.size());
  }
  return {{"runs", metrics.size()}, {"seeds", seeds}, {"mean", mean}, {"std", stdev}};
}

}  // namespace cgi
