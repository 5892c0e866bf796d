// cgi: command-line driver for training, intervention, analyses and reports.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cgi/error.hpp"
#include "cgi/harness.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Options shared by every subcommand; optional ones override the config file.
struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<int> epochs, hidden, k_mc, patience, threads;
  std::optional<double> tau, alpha, lr, dropout, ratio;
  std::optional<std::string> mode;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "RunConfig JSON file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Master seed")->required();
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--epochs", c.epochs, "Maximum training epochs");
  app->add_option("--hidden", c.hidden, "Hidden width");
  app->add_option("--patience", c.patience, "Early-stopping patience");
  app->add_option("--lr", c.lr, "Learning rate");
  app->add_option("--dropout", c.dropout, "Dropout rate");
  app->add_option("--alpha", c.alpha, "Teleport weight");
  app->add_option("--tau", c.tau, "Edge dropout rate for the uncertainty estimate");
  app->add_option("--k-mc", c.k_mc, "Monte-Carlo samples");
  app->add_option("--ratio", c.ratio, "Cross-category edge ratio to inject");
  app->add_option("--mode", c.mode, "Choice data mode")
      ->check(CLI::IsMember({"conflict_only", "literal"}));
  app->add_option("--threads", c.threads, "Worker threads (0 = hardware)");
}

cgi::RunConfig resolve(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw cgi::ParseError(c.config + ": " + e.what());
    }
  }
  j["seed"] = c.seed;
  auto set = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  set("epochs", c.epochs);
  set("hidden", c.hidden);
  set("patience", c.patience);
  set("lr", c.lr);
  set("dropout", c.dropout);
  set("alpha", c.alpha);
  set("tau", c.tau);
  set("k_mc", c.k_mc);
  set("threads", c.threads);
  if (c.ratio) j["perturb"]["ratio"] = *c.ratio;
  if (c.mode) j["choice"]["mode"] = *c.mode;
  if (!c.out.empty()) j["paths"]["out"] = c.out;
  auto config = cgi::parse_run_config(j);
  if (config.out_dir.empty()) config.out_dir = "out";
  return config;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw cgi::IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw cgi::IoError("cannot create " + dir.string() + ": " + ec.message());
}

int cmd_train(const Common& c) {
  const auto config = resolve(c);
  const auto g = cgi::load_config_graph(config);
  cgi::TrainConfig tc = config.train;
  const auto result = cgi::train(g, tc);
  const auto bundle = cgi::predict_bundle(result.model, g);
  ensure_dir(config.out_dir);
  cgi::save_model(result.model, tc, config.out_dir / "model.json");
  cgi::write_predictions(bundle, config.out_dir / "predictions.csv", true);
  cgi::write_losses(result.log, {}, config.out_dir / "losses.csv");
  const auto& labels = g.labels();
  json summary = {{"seed", config.seed},
                  {"best_epoch", result.best_epoch},
                  {"epochs_run", result.log.size()},
                  {"valid_accuracy", cgi::accuracy(bundle.z_hat, labels, g.splits().valid)},
                  {"test_accuracy", cgi::accuracy(bundle.z_hat, labels, g.splits().test)},
                  {"self_test_accuracy", cgi::accuracy(bundle.z_self, labels, g.splits().test)}};
  write_json(summary, config.out_dir / "train.json");
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_perturb(const Common& c) {
  auto config = resolve(c);
  if (config.perturb.ratio <= 0.0) {
    throw cgi::ValidationError("perturb needs a positive --ratio or perturb.ratio");
  }
  const auto before = [&] {
    auto plain = config;
    plain.perturb.ratio = 0.0;
    return cgi::load_config_graph(plain).num_edges();
  }();
  const auto g = cgi::load_config_graph(config);
  ensure_dir(config.out_dir);
  cgi::write_edges(g, config.out_dir / "edges.txt");
  std::cout << "edges " << before << " -> " << g.num_edges() << ", written to "
            << (config.out_dir / "edges.txt").string() << '\n';
  return 0;
}

int cmd_cgi(const Common& c) {
  const auto config = resolve(c);
  const auto result = cgi::run_pipeline(config);
  cgi::emit_report(result, config.out_dir);
  const auto& a = result.report.test;
  std::cout << std::fixed << std::setprecision(4) << "appnp " << a.appnp << "  self " << a.self
            << "  ensemble " << a.ensemble << "  lway " << a.lway << "  cgi " << a.cgi
            << "  oracle " << a.oracle << "  RI " << result.report.ri_over_appnp << '\n';
  if (!result.report.choice_trained) {
    std::cout << "choice model not trained: " << result.report.fallback_reason << '\n';
  }
  return 0;
}

/// Rebuilds bundle-free analyses from a factors.csv dump.
struct FactorDump {
  std::vector<std::string> split;
  std::vector<int> label, z_hat, z_self, p;
  std::vector<cgi::FactorVector> factors;
};

FactorDump read_factor_dump(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cgi::IoError("cannot open " + path.string());
  FactorDump d;
  std::string line;
  std::getline(in, line);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 12) cells.emplace_back();
    if (cells.size() != 13) {
      throw cgi::ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 13 columns");
    }
    try {
      d.split.push_back(cells[1]);
      d.label.push_back(std::stoi(cells[2]));
      d.z_hat.push_back(std::stoi(cells[3]));
      d.z_self.push_back(std::stoi(cells[4]));
      cgi::FactorVector f;
      f.graph_var = std::stod(cells[5]);
      f.self_conf = std::stod(cells[6]);
      f.neighbor_conf = std::stod(cells[7]);
      f.self_self = std::stod(cells[8]);
      f.neighbor_neighbor = std::stod(cells[9]);
      f.self_neighbor = std::stod(cells[10]);
      f.neighbor_self = std::stod(cells[11]);
      d.factors.push_back(f);
      d.p.push_back(cells[12].empty() ? 0 : std::stoi(cells[12]));
    } catch (const std::logic_error&) {
      throw cgi::ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return d;
}

int cmd_analyze(const Common& c, const std::string& run_dir) {
  const auto config = resolve(c);
  const auto d = read_factor_dump(fs::path(run_dir) / "factors.csv");

  std::vector<double> gv, conf;
  std::vector<char> correct;
  cgi::ChoiceEvalSet eval;
  cgi::ChoiceDataset data;
  for (std::size_t i = 0; i < d.label.size(); ++i) {
    if (d.p[i] != 0) data.rows.push_back({d.factors[i], d.p[i], static_cast<int>(i)});
    if (d.split[i] != "test") continue;
    gv.push_back(d.factors[i].graph_var);
    conf.push_back(d.factors[i].self_conf);
    correct.push_back(d.z_hat[i] == d.label[i]);
    if (d.z_hat[i] != d.z_self[i]) {
      eval.factors.push_back(d.factors[i]);
      eval.hat_correct.push_back(d.z_hat[i] == d.label[i]);
      eval.self_correct.push_back(d.z_self[i] == d.label[i]);
    }
  }
  const auto by_gv = cgi::decile_analysis(gv, correct, 10, cgi::SortOrder::kAscending);
  const auto by_conf = cgi::decile_analysis(conf, correct, 10, cgi::SortOrder::kDescending);
  const auto overlap = cgi::overlap_matrix(cgi::rank_order(gv, cgi::SortOrder::kAscending),
                                           cgi::rank_order(conf, cgi::SortOrder::kDescending));
  std::vector<double> idx, acc_gv, acc_conf;
  for (int k = 0; k < 10; ++k) {
    idx.push_back(k);
    acc_gv.push_back(by_gv[k].accuracy);
    acc_conf.push_back(by_conf[k].accuracy);
  }

  const fs::path out = c.out.empty() ? fs::path(run_dir) : config.out_dir;
  ensure_dir(out);
  {
    std::ofstream f(out / "deciles.csv");
    f << std::setprecision(17) << "ranking,group,size,accuracy,mean_score\n";
    for (int k = 0; k < 10; ++k) {
      f << "graph_var_asc," << k << ',' << by_gv[k].size << ',' << by_gv[k].accuracy << ','
        << by_gv[k].mean_score << '\n';
    }
    for (int k = 0; k < 10; ++k) {
      f << "self_conf_desc," << k << ',' << by_conf[k].size << ',' << by_conf[k].accuracy << ','
        << by_conf[k].mean_score << '\n';
    }
    std::ofstream o(out / "overlap.csv");
    o << std::setprecision(17);
    for (Eigen::Index i = 0; i < overlap.rows(); ++i) {
      for (Eigen::Index k = 0; k < overlap.cols(); ++k) o << (k ? "," : "") << overlap(i, k);
      o << '\n';
    }
  }
  json report = {{"seed", config.seed},
                 {"graph_var_spearman", cgi::spearman(idx, acc_gv)},
                 {"confidence_spearman", cgi::spearman(idx, acc_conf)},
                 {"choice_rows", data.size()},
                 {"eval_conflicts", eval.factors.size()}};
  const auto y = data.labels();
  const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), -1) > 0;
  if (data.size() >= static_cast<std::size_t>(config.min_choice_rows) && both) {
    json rows = json::array();
    for (const auto& e : cgi::ablate_factors(data, eval, cgi::single_factor_rounds(), config.svm)) {
      rows.push_back({{"name", e.name},
                      {"cv_accuracy", e.cv_accuracy},
                      {"choice_accuracy", e.choice_accuracy}});
    }
    report["ablation"] = std::move(rows);
  }
  write_json(report, out / "analysis.json");
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_pilot(const Common& c, bool zero_trust) {
  const auto config = resolve(c);
  const auto g = cgi::load_config_graph(config);
  const auto r = cgi::trust_feature_experiment(g, config, zero_trust);
  ensure_dir(config.out_dir);
  cgi::write_losses(r.plain_log, r.trust_log, config.out_dir / "losses.csv");
  json j = {{"seed", config.seed}, {"plain", r.plain}, {"trust", r.trust}, {"bound", r.bound}};
  write_json(j, config.out_dir / "pilot.json");
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
  std::vector<json> metrics;
  for (const auto& run : runs) {
    fs::path p(run);
    if (fs::is_directory(p)) p /= "metrics.json";
    std::ifstream in(p);
    if (!in) throw cgi::IoError("cannot open " + p.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw cgi::ParseError(p.string() + ": " + e.what());
    }
    metrics.push_back(std::move(j));
  }
  auto summary = cgi::summarize_runs(metrics);
  summary["report_seed"] = c.seed;
  if (!c.out.empty()) {
    ensure_dir(c.out);
    write_json(summary, fs::path(c.out) / "summary.json");
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal GCN inference: training, intervention and analysis"};
  app.require_subcommand(1);

  Common train_opts, perturb_opts, cgi_opts, analyze_opts, pilot_opts, report_opts;
  auto* train = app.add_subcommand("train", "Train the APPNP classifier");
  add_common(train, train_opts);
  auto* perturb = app.add_subcommand("perturb", "Inject cross-category edges and write the edge list");
  add_common(perturb, perturb_opts);
  auto* run = app.add_subcommand("cgi", "Run the full train / intervene / choose pipeline");
  add_common(run, cgi_opts);
  auto* analyze = app.add_subcommand("analyze", "Deciles, overlap and factor ablation from a run");
  add_common(analyze, analyze_opts);
  std::string run_dir;
  analyze->add_option("--run", run_dir, "Directory holding factors.csv")->required();
  auto* pilot = app.add_subcommand("pilot", "Oracle bound and trust-feature experiment");
  add_common(pilot, pilot_opts);
  bool zero_trust = false;
  pilot->add_flag("--zero-trust", zero_trust, "Use an all-zero trust column");
  auto* report = app.add_subcommand("report", "Mean and std of metrics across runs");
  report->add_option("--seed", report_opts.seed, "Seed recorded with the summary")->required();
  report->add_option("--out", report_opts.out, "Directory for summary.json");
  std::vector<std::string> runs;
  report->add_option("runs", runs, "Run directories or metrics.json files")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_opts);
    if (*perturb) return cmd_perturb(perturb_opts);
    if (*run) return cmd_cgi(cgi_opts);
    if (*analyze) return cmd_analyze(analyze_opts, run_dir);
    if (*pilot) return cmd_pilot(pilot_opts, zero_trust);
    if (*report) return cmd_report(report_opts, runs);
  } catch (const cgi::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cgi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
