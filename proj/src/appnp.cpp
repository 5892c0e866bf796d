#include "cgi/appnp.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "json.hpp"

#include "cgi/error.hpp"

namespace cgi {

void AppnpModel::validate() const {
  if (!(alpha_teleport > 0.0 && alpha_teleport <= 1.0)) {
    throw ValidationError("alpha_teleport must lie in (0, 1]");
  }
  if (k_prop < 1) throw ValidationError("k_prop must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("dropout rate must lie in [0, 1)");
  }
}

Matrix propagate(const Matrix& h, const NormalizedAdjacency& a_hat, double alpha, int k) {
  if (a_hat.size() != h.rows()) {
    throw DimensionError("adjacency has " + std::to_string(a_hat.size()) + " rows, logits have " +
                         std::to_string(h.rows()));
  }
  const Matrix teleport = alpha * h;
  Matrix z = h;
  for (int t = 0; t < k; ++t) {
    Matrix next = a_hat.matrix() * z;
    next *= (1.0 - alpha);
    next += teleport;
    z.swap(next);
  }
  return z;
}

NormalizedAdjacency mode_adjacency(const Graph& g, const InferenceMode& mode) {
  struct Visitor {
    const Graph& g;
    NormalizedAdjacency operator()(const FullMode&) const { return normalize_adjacency(g); }
    NormalizedAdjacency operator()(const SelfMode&) const {
      return NormalizedAdjacency::identity(g.num_nodes());
    }
    NormalizedAdjacency operator()(const SampledMode& m) const {
      if (m.stream == nullptr) throw ValidationError("sampled inference needs a stream");
      return edge_dropout_sample(g, m.tau, *m.stream);
    }
  };
  return std::visit(Visitor{g}, mode);
}

Matrix mlp_logits(const AppnpModel& model, const Matrix& features) {
  return mlp_forward(model.mlp, features, 0.0, Phase::kEval).logits;
}

Matrix forward(const AppnpModel& model, const Graph& g, const InferenceMode& mode, Phase phase,
               Rng* dropout_stream) {
  model.validate();
  const auto adj = mode_adjacency(g, mode);
  const auto cache = mlp_forward(model.mlp, g.features(),
                                 phase == Phase::kTrain ? model.dropout_rate : 0.0, phase,
                                 dropout_stream);
  return softmax_rows(propagate(cache.logits, adj, model.alpha_teleport, model.k_prop));
}

ObjectiveValue appnp_objective(const AppnpModel& model, const NormalizedAdjacency& a_hat,
                               const Matrix& features, std::span<const int> labels,
                               std::span<const int> index_set, double l2_lambda, L2Blocks blocks,
                               Phase phase, Rng* dropout_stream) {
  const auto cache = mlp_forward(model.mlp, features,
                                 phase == Phase::kTrain ? model.dropout_rate : 0.0, phase,
                                 dropout_stream);
  const Matrix z = propagate(cache.logits, a_hat, model.alpha_teleport, model.k_prop);
  const auto ce = softmax_cross_entropy(z, labels, index_set);
  // The propagation operator is a polynomial in the symmetric A_hat, hence
  // self-adjoint: the gradient w.r.t. the logits is the propagated gradient.
  const Matrix d_logits = propagate(ce.d_logits, a_hat, model.alpha_teleport, model.k_prop);

  ObjectiveValue out;
  out.data_loss = ce.loss;
  out.loss = ce.loss;
  if (l2_lambda != 0.0) {
    const auto& p = model.mlp;
    double reg = 0.0;
    if (blocks.w1) reg += p.w1.squaredNorm();
    if (blocks.b1) reg += p.b1.squaredNorm();
    if (blocks.w2) reg += p.w2.squaredNorm();
    if (blocks.b2) reg += p.b2.squaredNorm();
    out.loss += l2_lambda * reg;
  }
  out.grad = mlp_backward(model.mlp, cache, d_logits, l2_lambda, blocks);
  return out;
}

TrainResult train(const Graph& g, const TrainConfig& config) {
  const auto& train_idx = g.splits().train;
  if (train_idx.empty()) throw ValidationError("training split is empty");
  if (config.hidden < 1) throw ValidationError("hidden width must be positive");
  if (config.epochs < 1) throw ValidationError("epochs must be positive");

  Rng init_stream = make_stream(config.seed, 0);
  Rng dropout_stream = make_stream(config.seed, 1);

  TrainResult result;
  AppnpModel& model = result.model;
  model.mlp = MlpParams::glorot(g.feature_dim(), config.hidden, g.num_classes(), init_stream);
  model.alpha_teleport = config.alpha;
  model.k_prop = config.k_prop;
  model.dropout_rate = config.dropout;
  model.validate();

  const auto adj = normalize_adjacency(g);
  const L2Blocks blocks = config.l2_all_blocks ? L2Blocks::all() : L2Blocks{};
  const AdamConfig adam{config.lr};
  OptState state = OptState::like(model.mlp);
  const auto& valid_idx = g.splits().valid;
  const auto& labels = g.labels();

  MlpParams best = model.mlp;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto obj = appnp_objective(model, adj, g.features(), labels, train_idx,
                                     config.l2_lambda, blocks, Phase::kTrain, &dropout_stream);
    if (!std::isfinite(obj.loss)) {
      throw TrainingError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    adam_step(model.mlp, obj.grad, state, adam);

    const Matrix z = propagate(mlp_logits(model, g.features()), adj, model.alpha_teleport,
                               model.k_prop);
    const auto pred = argmax_rows(z);
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = obj.data_loss;
    entry.train_acc = accuracy(pred, labels, train_idx);
    if (!valid_idx.empty()) {
      entry.valid_loss = softmax_cross_entropy(z, labels, valid_idx).loss;
      entry.valid_acc = accuracy(pred, labels, valid_idx);
    } else {
      entry.valid_loss = softmax_cross_entropy(z, labels, train_idx).loss;
    }
    if (!std::isfinite(entry.valid_loss)) {
      throw TrainingError("validation loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);

    if (entry.valid_loss < best_loss) {
      best_loss = entry.valid_loss;
      best = model.mlp;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.mlp = std::move(best);
  result.best_valid_loss = best_loss;
  return result;
}

PredictionBundle make_bundle(Matrix y_hat, Matrix y_self) {
  PredictionBundle b;
  b.effect = y_hat - y_self;
  b.z_hat = argmax_rows(y_hat);
  b.z_self = argmax_rows(y_self);
  b.y_hat = std::move(y_hat);
  b.y_self = std::move(y_self);
  return b;
}

PredictionBundle predict_bundle(const AppnpModel& model, const Graph& g) {
  model.validate();
  const Matrix logits = mlp_logits(model, g.features());
  Matrix y_hat =
      softmax_rows(propagate(logits, normalize_adjacency(g), model.alpha_teleport, model.k_prop));
  Matrix y_self = softmax_rows(propagate(logits, NormalizedAdjacency::identity(g.num_nodes()),
                                         model.alpha_teleport, model.k_prop));
  return make_bundle(std::move(y_hat), std::move(y_self));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "cgi-appnp-checkpoint";
constexpr int kCheckpointVersion = 1;

template <typename M>
nlohmann::json block_to_json(const M& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

template <typename M>
void block_from_json(const nlohmann::json& j, M& m, const char* name) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ParseError(std::string("checkpoint block ") + name + " has wrong element count");
  }
  m.resize(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
}

}  // namespace

void save_model(const AppnpModel& model, const TrainConfig& config,
                const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["shapes"] = {{"input", model.mlp.input_dim()},
                 {"hidden", model.mlp.hidden_dim()},
                 {"classes", model.mlp.output_dim()}};
  j["hyperparameters"] = {{"alpha", model.alpha_teleport},
                          {"k_prop", model.k_prop},
                          {"dropout", model.dropout_rate},
                          {"lr", config.lr},
                          {"l2_lambda", config.l2_lambda},
                          {"epochs", config.epochs},
                          {"patience", config.patience}};
  j["seed"] = config.seed;
  j["blocks"] = {{"w1", block_to_json(model.mlp.w1)},
                 {"b1", block_to_json(model.mlp.b1)},
                 {"w2", block_to_json(model.mlp.w2)},
                 {"b2", block_to_json(model.mlp.b2)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

AppnpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw ParseError(path.string() + ": not an APPNP checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ParseError(path.string() + ": unsupported checkpoint version");
    }
    AppnpModel m;
    const auto& hp = j.at("hyperparameters");
    m.alpha_teleport = hp.at("alpha").get<double>();
    m.k_prop = hp.at("k_prop").get<int>();
    m.dropout_rate = hp.at("dropout").get<double>();
    const auto& blocks = j.at("blocks");
    block_from_json(blocks.at("w1"), m.mlp.w1, "w1");
    block_from_json(blocks.at("b1"), m.mlp.b1, "b1");
    block_from_json(blocks.at("w2"), m.mlp.w2, "w2");
    block_from_json(blocks.at("b2"), m.mlp.b2, "b2");
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_predictions(const PredictionBundle& bundle, const std::filesystem::path& path,
                       bool with_probabilities) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto classes = bundle.y_hat.cols();
  out << "node,z_hat,z_self";
  if (with_probabilities) {
    for (Eigen::Index c = 0; c < classes; ++c) out << ",p_hat_" << c;
    for (Eigen::Index c = 0; c < classes; ++c) out << ",p_self_" << c;
  }
  out << '\n';
  out << std::setprecision(17);
  for (int i = 0; i < bundle.num_nodes(); ++i) {
    out << i << ',' << bundle.z_hat[i] << ',' << bundle.z_self[i];
    if (with_probabilities) {
      for (Eigen::Index c = 0; c < classes; ++c) out << ',' << bundle.y_hat(i, c);
      for (Eigen::Index c = 0; c < classes; ++c) out << ',' << bundle.y_self(i, c);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cgi
