#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgi/appnp.hpp"
#include "cgi/graph.hpp"
#include "cgi/svm.hpp"

namespace cgi {

/// The seven inputs of the choice model. `self_conf` is y_hat at z_hat and
/// `neighbor_conf` is y_self at z_self: the names follow the original
/// method's labels, which read swapped relative to the quantities.
struct FactorVector {
  double graph_var = 0.0;
  double self_conf = 0.0;
  double neighbor_conf = 0.0;
  double self_self = 0.0;
  double neighbor_neighbor = 0.0;
  double self_neighbor = 0.0;
  double neighbor_self = 0.0;

  static constexpr std::size_t kCount = 7;
  static constexpr std::array<std::string_view, kCount> kNames{
      "graph_var",         "self_conf",     "neighbor_conf", "self_self",
      "neighbor_neighbor", "self_neighbor", "neighbor_self"};

  std::array<double, kCount> values() const {
    return {graph_var, self_conf, neighbor_conf, self_self,
            neighbor_neighbor, self_neighbor, neighbor_self};
  }
  RowVector row() const;
};

/// Index of a factor by name, or nullopt.
std::optional<std::size_t> factor_index(std::string_view name);

struct CausalUncertainty {
  Matrix variance;  // n x L, population variance over the samples
  Vector graph_var;  // variance at the originally predicted class
};

struct UncertaintyOptions {
  int k_mc = 50;
  double tau = 0.15;
  std::uint64_t master_seed = 0;
  /// 0 uses the hardware concurrency.
  unsigned threads = 0;
};

/// Sample k uses make_stream(master_seed, k) for its edge draws.
CausalUncertainty estimate_causal_uncertainty(const AppnpModel& model, const Graph& g,
                                              std::span<const int> z_hat,
                                              const UncertaintyOptions& options);

FactorVector extract_factors(const PredictionBundle& bundle, const Vector& graph_var,
                             const TransitionMatrix& t, int node);

std::vector<FactorVector> extract_all_factors(const PredictionBundle& bundle,
                                              const Vector& graph_var, const TransitionMatrix& t);

enum class DatasetMode { kConflictOnly, kLiteral };

struct ChoiceRow {
  FactorVector factors;
  int p = 0;  // +1 when the original classification is correct
  int node = 0;
};

struct ChoiceDataset {
  std::vector<ChoiceRow> rows;

  std::size_t size() const { return rows.size(); }
  /// Rows x selected factor columns.
  Matrix features(std::span<const std::size_t> columns) const;
  Matrix features() const;
  std::vector<int> labels() const;
};

/// Nodes whose original or post-intervention classification is correct;
/// conflict_only further requires the two classifications to differ.
ChoiceDataset build_choice_dataset(const PredictionBundle& bundle,
                                   const std::vector<FactorVector>& factors,
                                   std::span<const int> true_labels,
                                   std::span<const int> candidate_set, DatasetMode mode);

/// Decision value of the choice model for one factor vector.
double choice_decision(const ChoiceModel& model, const FactorVector& factors);

/// Final class per node: z_hat where the two classifications agree or the
/// decision is at least `threshold`, z_self otherwise. Without a model the
/// original classification is kept.
std::vector<int> cgi_predict(const PredictionBundle& bundle,
                             const std::vector<FactorVector>& factors, const ChoiceModel* model,
                             double threshold = 0.0);

/// Linear softmax head over [y_hat, y_self, effect].
struct LwayBaseline {
  Matrix weights;  // 3L x L
  RowVector bias;

  static Matrix inputs(const PredictionBundle& bundle);
  Matrix logits(const Matrix& inputs) const;
  std::vector<int> predict(const PredictionBundle& bundle) const;

  std::size_t size() const { return static_cast<std::size_t>(weights.size() + bias.size()); }
  Vector flatten() const;
  void assign(const Vector& flat);
};

struct LwayOptions {
  double reg_alpha = 5e-4;
  double lr = 0.01;
  int epochs = 500;
  std::uint64_t seed = 0;
};

/// Cross-entropy on `train_set` plus reg_alpha * ||weights||_F^2, and its
/// gradient in LwayBaseline::flatten order.
std::pair<double, Vector> lway_objective(const LwayBaseline& head, const Matrix& inputs,
                                         std::span<const int> labels,
                                         std::span<const int> train_set, double reg_alpha);

LwayBaseline lway_baseline(const PredictionBundle& bundle, std::span<const int> true_labels,
                           std::span<const int> train_set, const LwayOptions& options = {});

/// Argmax of (y_hat + y_self) / 2.
std::vector<int> ensemble_predict(const PredictionBundle& bundle);

/// CSV: node,split,label,z_hat,z_self,<seven factors>,p (p empty when the
/// node is not part of the choice data).
void write_factors(const std::vector<FactorVector>& factors, const PredictionBundle& bundle,
                   const Graph& g, const ChoiceDataset& dataset,
                   const std::filesystem::path& path);

}  // namespace cgi
