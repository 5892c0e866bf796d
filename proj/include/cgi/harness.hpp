#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cgi/appnp.hpp"
#include "cgi/cgi.hpp"
#include "cgi/graph.hpp"
#include "cgi/svm.hpp"
#include "cgi/synthetic.hpp"

namespace cgi {

struct DataPaths {
  std::filesystem::path edges;
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path splits;
  int num_classes = 0;
};

struct PerturbConfig {
  double ratio = 0.0;  // 0 disables injection
  double node_fraction = 0.5;
  bool both_endpoints = true;
};

enum class ChoiceNodes { kValid, kTrainValid };

/// Everything a pipeline run depends on. Parsed from the RunConfig JSON.
struct RunConfig {
  std::uint64_t seed = 0;
  TrainConfig train;
  /// When nonempty the teleport weight is picked by validation accuracy.
  std::vector<double> alpha_grid;
  double tau = 0.15;
  int k_mc = 50;
  ChoiceTrainOptions svm;
  DatasetMode dataset_mode = DatasetMode::kConflictOnly;
  ChoiceNodes choice_nodes = ChoiceNodes::kValid;
  /// Below this many choice rows the pipeline keeps the original classes.
  int min_choice_rows = 10;
  LwayOptions lway;
  std::optional<DataPaths> data;
  std::optional<PlantedPartitionConfig> synthetic;
  PerturbConfig perturb;
  bool analyses = true;
  unsigned threads = 0;
  std::filesystem::path out_dir;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

/// Loads (or generates) the graph a config describes, including injection.
Graph load_config_graph(const RunConfig& config);

struct GroupStat {
  int size = 0;
  double accuracy = 0.0;
  double mean_score = 0.0;
};

enum class SortOrder { kAscending, kDescending };

/// Stable sort by score (ties by position), contiguous groups with the
/// remainder going to the earliest groups.
std::vector<GroupStat> decile_analysis(std::span<const double> scores,
                                       std::span<const char> correct, int groups = 10,
                                       SortOrder order = SortOrder::kAscending);

/// Positions of `scores` in ranked order.
std::vector<int> rank_order(std::span<const double> scores, SortOrder order);

/// Entry (i, j) = |group i of a  intersect  group j of b| / |group i of a|.
Matrix overlap_matrix(std::span<const int> rank_a, std::span<const int> rank_b, int groups = 10);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Accuracy of always picking whichever of z_hat / z_self is correct.
double oracle_bound(const PredictionBundle& bundle, std::span<const int> labels,
                    std::span<const int> eval_set);

/// Conflict nodes an ablation is scored on.
struct ChoiceEvalSet {
  std::vector<FactorVector> factors;
  std::vector<char> hat_correct;
  std::vector<char> self_correct;
};

ChoiceEvalSet conflict_eval_set(const PredictionBundle& bundle,
                                const std::vector<FactorVector>& factors,
                                std::span<const int> labels, std::span<const int> nodes);

struct AblationEntry {
  std::string name;  // "all_factors", "majority_class" or "-<factor>[,<factor>]"
  std::vector<std::string> dropped;
  double cv_accuracy = 0.0;
  double choice_accuracy = 0.0;  // on the evaluation conflict nodes
};

/// One round per entry of `rounds`, each refitting the choice model without
/// the listed factors; also reports the all-factor fit and the
/// always-keep-original reference.
std::vector<AblationEntry> ablate_factors(const ChoiceDataset& data, const ChoiceEvalSet& eval,
                                          const std::vector<std::vector<std::string>>& rounds,
                                          const ChoiceTrainOptions& options);

/// Single-factor rounds over all seven factors.
std::vector<std::vector<std::string>> single_factor_rounds();

struct MethodAccuracy {
  double appnp = 0.0;
  double self = 0.0;
  double ensemble = 0.0;
  double lway = 0.0;
  double cgi = 0.0;
  double oracle = 0.0;
};

struct DecileReport {
  std::vector<GroupStat> by_graph_var;   // ascending
  std::vector<GroupStat> by_confidence;  // self_conf descending
  double graph_var_spearman = 0.0;
  double confidence_spearman = 0.0;
  Matrix overlap;
};

struct MetricsReport {
  std::uint64_t seed = 0;
  MethodAccuracy test;
  double ri_over_appnp = 0.0;
  double ri_over_ensemble = 0.0;
  int test_size = 0;
  int conflict_count = 0;
  double conflict_cgi_accuracy = 0.0;
  double conflict_majority_accuracy = 0.0;
  bool choice_trained = false;
  std::string fallback_reason;
  int choice_rows = 0;
  std::optional<ChoiceModel> choice_model;
  int best_epoch = 0;
  int epochs_run = 0;
  double alpha = 0.0;
  std::optional<DecileReport> deciles;
  std::optional<std::vector<AblationEntry>> ablation;
  std::map<std::string, double> timing_seconds;
};

/// Everything a run produced, for emission and further analysis.
struct PipelineResult {
  MetricsReport report;
  RunConfig config;
  Graph graph;
  AppnpModel model;
  PredictionBundle bundle;
  CausalUncertainty uncertainty;
  TransitionMatrix transition;
  std::vector<FactorVector> factors;
  ChoiceDataset choice_data;
  std::vector<int> z_cgi;
  std::vector<int> z_ensemble;
  std::vector<int> z_lway;
  std::vector<EpochLog> train_log;
};

/// Train, intervene, fit the choice model and evaluate on the test split.
PipelineResult run_pipeline(const RunConfig& config);
PipelineResult run_pipeline(const RunConfig& config, const Graph& graph);

nlohmann::json metrics_json(const MetricsReport& report, const RunConfig& config);

/// Writes metrics.json, predictions.csv, factors.csv, losses.csv and, when
/// analyses ran, deciles.csv and overlap.csv.
void emit_report(const PipelineResult& result, const std::filesystem::path& out_dir);

struct TrustExperiment {
  double plain = 0.0;
  double trust = 0.0;
  double bound = 0.0;
  std::vector<EpochLog> plain_log;
  std::vector<EpochLog> trust_log;
};

/// Trains a plain model, derives the per-node trust value (+1/-1 on
/// conflict nodes by correctness of z_hat, 0 elsewhere), retrains with it as
/// an extra feature column, and reports test accuracies with the oracle
/// bound of the plain model.
TrustExperiment trust_feature_experiment(const Graph& g, const RunConfig& config,
                                         bool zero_trust_feature = false);

void write_losses(std::span<const EpochLog> plain, std::span<const EpochLog> trust,
                  const std::filesystem::path& path);

/// Mean and population standard deviation of metrics across runs.
nlohmann::json summarize_runs(const std::vector<nlohmann::json>& metrics);

}  // namespace cgi
