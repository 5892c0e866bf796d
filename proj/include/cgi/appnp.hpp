#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "cgi/graph.hpp"
#include "cgi/nn.hpp"

namespace cgi {

/// Perceptron followed by personalized-PageRank propagation of its logits.
/// `alpha_teleport` is the self-retention weight of the propagation, not a
/// regularization strength.
struct AppnpModel {
  MlpParams mlp;
  double alpha_teleport = 0.1;
  int k_prop = 10;
  double dropout_rate = 0.5;

  void validate() const;
};

/// Predictions with neighbors (y_hat), with the neighborhood blocked
/// (y_self), and the causal effect of the neighborhood between them.
struct PredictionBundle {
  Matrix y_hat;
  Matrix y_self;
  Matrix effect;
  std::vector<int> z_hat;
  std::vector<int> z_self;

  int num_nodes() const { return static_cast<int>(y_hat.rows()); }
  bool conflict(int node) const { return z_hat[node] != z_self[node]; }
};

struct FullMode {};
/// do(N = empty): the adjacency is replaced by the identity.
struct SelfMode {};
struct SampledMode {
  double tau = 0.15;
  Rng* stream = nullptr;
};
using InferenceMode = std::variant<FullMode, SelfMode, SampledMode>;

/// z0 = h; z_{t+1} = (1 - alpha) A z_t + alpha h; returns z_k.
Matrix propagate(const Matrix& h, const NormalizedAdjacency& a_hat, double alpha, int k);

/// The adjacency an inference mode propagates over.
NormalizedAdjacency mode_adjacency(const Graph& g, const InferenceMode& mode);

/// Class probabilities. Dropout only acts in the training phase and needs
/// `dropout_stream`; inference modes never apply feature dropout.
Matrix forward(const AppnpModel& model, const Graph& g, const InferenceMode& mode,
               Phase phase = Phase::kEval, Rng* dropout_stream = nullptr);

/// Perceptron logits in eval phase, before propagation.
Matrix mlp_logits(const AppnpModel& model, const Matrix& features);

struct TrainConfig {
  int hidden = 64;
  double dropout = 0.5;
  double lr = 0.01;
  double l2_lambda = 5e-4;
  bool l2_all_blocks = false;
  double alpha = 0.1;
  int k_prop = 10;
  int epochs = 1000;
  int patience = 100;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double train_acc = 0.0;
  double valid_acc = 0.0;
};

struct TrainResult {
  AppnpModel model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_valid_loss = 0.0;
};

struct ObjectiveValue {
  double loss = 0.0;  // cross-entropy + weight decay
  double data_loss = 0.0;
  MlpParams grad;
};

/// Training objective on `index_set` and its exact gradient with respect to
/// the perceptron parameters, through propagation over `a_hat`.
ObjectiveValue appnp_objective(const AppnpModel& model, const NormalizedAdjacency& a_hat,
                               const Matrix& features, std::span<const int> labels,
                               std::span<const int> index_set, double l2_lambda, L2Blocks blocks,
                               Phase phase, Rng* dropout_stream = nullptr);

TrainResult train(const Graph& g, const TrainConfig& config);

PredictionBundle predict_bundle(const AppnpModel& model, const Graph& g);

/// Builds a bundle from precomputed probability matrices.
PredictionBundle make_bundle(Matrix y_hat, Matrix y_self);

void save_model(const AppnpModel& model, const TrainConfig& config,
                const std::filesystem::path& path);
AppnpModel load_model(const std::filesystem::path& path);

/// CSV: node,z_hat,z_self[,p_hat_0..,p_self_0..].
void write_predictions(const PredictionBundle& bundle, const std::filesystem::path& path,
                       bool with_probabilities = false);

}  // namespace cgi
