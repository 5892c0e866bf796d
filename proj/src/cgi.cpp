#include "cgi/cgi.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <thread>

#include "cgi/error.hpp"

namespace cgi {

RowVector FactorVector::row() const {
  const auto v = values();
  RowVector r(static_cast<Eigen::Index>(kCount));
  for (std::size_t k = 0; k < kCount; ++k) r(static_cast<Eigen::Index>(k)) = v[k];
  return r;
}

std::optional<std::size_t> factor_index(std::string_view name) {
  for (std::size_t k = 0; k < FactorVector::kCount; ++k) {
    if (FactorVector::kNames[k] == name) return k;
  }
  return std::nullopt;
}

CausalUncertainty estimate_causal_uncertainty(const AppnpModel& model, const Graph& g,
                                              std::span<const int> z_hat,
                                              const UncertaintyOptions& options) {
  if (options.k_mc < 2) throw ValidationError("Monte-Carlo estimate needs k_mc >= 2");
  if (static_cast<int>(z_hat.size()) != g.num_nodes()) {
    throw DimensionError("z_hat length does not match node count");
  }
  model.validate();
  const Matrix logits = mlp_logits(model, g.features());
  const int k_mc = options.k_mc;
  std::vector<Matrix> samples(k_mc);

  auto run_sample = [&](int k) {
    Rng stream = make_stream(options.master_seed, static_cast<std::uint64_t>(k));
    const auto adj = edge_dropout_sample(g, options.tau, stream);
    samples[k] = softmax_rows(propagate(logits, adj, model.alpha_teleport, model.k_prop));
  };
  unsigned threads = options.threads != 0 ? options.threads : std::thread::hardware_concurrency();
  threads = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(k_mc));
  if (threads == 1) {
    for (int k = 0; k < k_mc; ++k) run_sample(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (int k = next++; k < k_mc; k = next++) run_sample(k);
      });
    }
  }

  // Merged in sample order so the result does not depend on scheduling.
  // Deviations are taken from the first sample, so identical samples give
  // exactly zero variance.
  const Matrix& pivot = samples.front();
  Matrix shift = Matrix::Zero(logits.rows(), logits.cols());
  for (const auto& s : samples) shift += s - pivot;
  shift /= static_cast<double>(k_mc);
  CausalUncertainty out;
  out.variance = Matrix::Zero(logits.rows(), logits.cols());
  for (const auto& s : samples) out.variance.array() += (s - pivot - shift).array().square();
  out.variance /= static_cast<double>(k_mc);
  out.graph_var.resize(g.num_nodes());
  for (int i = 0; i < g.num_nodes(); ++i) out.graph_var(i) = out.variance(i, z_hat[i]);
  return out;
}

FactorVector extract_factors(const PredictionBundle& bundle, const Vector& graph_var,
                             const TransitionMatrix& t, int node) {
  const int z = bundle.z_hat[node];
  const int zs = bundle.z_self[node];
  FactorVector f;
  f.graph_var = graph_var(node);
  f.self_conf = bundle.y_hat(node, z);
  f.neighbor_conf = bundle.y_self(node, zs);
  f.self_self = t(z, z);
  f.neighbor_neighbor = t(zs, zs);
  f.self_neighbor = t(z, zs);
  f.neighbor_self = t(zs, z);
  return f;
}

std::vector<FactorVector> extract_all_factors(const PredictionBundle& bundle,
                                              const Vector& graph_var,
                                              const TransitionMatrix& t) {
  if (graph_var.size() != bundle.num_nodes()) {
    throw DimensionError("graph_var length does not match node count");
  }
  std::vector<FactorVector> out(bundle.num_nodes());
  for (int i = 0; i < bundle.num_nodes(); ++i) out[i] = extract_factors(bundle, graph_var, t, i);
  return out;
}

Matrix ChoiceDataset::features(std::span<const std::size_t> columns) const {
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto v = rows[r].factors.values();
    for (std::size_t c = 0; c < columns.size(); ++c) x(r, c) = v.at(columns[c]);
  }
  return x;
}

Matrix ChoiceDataset::features() const {
  std::array<std::size_t, FactorVector::kCount> all{};
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  return features(all);
}

std::vector<int> ChoiceDataset::labels() const {
  std::vector<int> y;
  y.reserve(rows.size());
  for (const auto& r : rows) y.push_back(r.p);
  return y;
}

ChoiceDataset build_choice_dataset(const PredictionBundle& bundle,
                                   const std::vector<FactorVector>& factors,
                                   std::span<const int> true_labels,
                                   std::span<const int> candidate_set, DatasetMode mode) {
  ChoiceDataset data;
  for (int i : candidate_set) {
    const int z = true_labels[i];
    if (z == kUnlabeled) {
      throw ValidationError("choice candidate " + std::to_string(i) + " is unlabeled");
    }
    const bool hat_ok = bundle.z_hat[i] == z;
    const bool self_ok = bundle.z_self[i] == z;
    if (!hat_ok && !self_ok) continue;
    if (mode == DatasetMode::kConflictOnly && !bundle.conflict(i)) continue;
    data.rows.push_back({factors.at(i), hat_ok ? 1 : -1, i});
  }
  if (data.rows.empty()) {
    throw DatasetSparsityError(
        "no candidate node qualifies for the choice data; fall back to the original "
        "classification");
  }
  return data;
}

double choice_decision(const ChoiceModel& model, const FactorVector& factors) {
  const auto v = factors.values();
  if (model.dim() == static_cast<int>(FactorVector::kCount)) return model.decision(factors.row());
  // Ablated models carry the names of the factor columns they were fit on.
  RowVector x(model.dim());
  for (int k = 0; k < model.dim(); ++k) {
    const auto idx = factor_index(model.feature_names.at(k));
    if (!idx) throw ValidationError("unknown factor " + model.feature_names[k]);
    x(k) = v[*idx];
  }
  return model.decision(x);
}

std::vector<int> cgi_predict(const PredictionBundle& bundle,
                             const std::vector<FactorVector>& factors, const ChoiceModel* model,
                             double threshold) {
  std::vector<int> out(bundle.z_hat);
  if (model == nullptr) return out;
  for (int i = 0; i < bundle.num_nodes(); ++i) {
    if (!bundle.conflict(i)) continue;
    out[i] = choice_decision(*model, factors.at(i)) >= threshold ? bundle.z_hat[i]
                                                                 : bundle.z_self[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// L-way baseline

Matrix LwayBaseline::inputs(const PredictionBundle& bundle) {
  const auto n = bundle.y_hat.rows();
  const auto l = bundle.y_hat.cols();
  Matrix x(n, 3 * l);
  x << bundle.y_hat, bundle.y_self, bundle.effect;
  return x;
}

Matrix LwayBaseline::logits(const Matrix& inputs) const {
  return (inputs * weights).rowwise() + bias;
}

std::vector<int> LwayBaseline::predict(const PredictionBundle& bundle) const {
  return argmax_rows(logits(inputs(bundle)));
}

Vector LwayBaseline::flatten() const {
  Vector flat(static_cast<Eigen::Index>(size()));
  std::copy(weights.data(), weights.data() + weights.size(), flat.data());
  std::copy(bias.data(), bias.data() + bias.size(), flat.data() + weights.size());
  return flat;
}

void LwayBaseline::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != size()) {
    throw DimensionError("flat parameter vector has wrong length");
  }
  std::copy(flat.data(), flat.data() + weights.size(), weights.data());
  std::copy(flat.data() + weights.size(), flat.data() + flat.size(), bias.data());
}

std::pair<double, Vector> lway_objective(const LwayBaseline& head, const Matrix& inputs,
                                         std::span<const int> labels,
                                         std::span<const int> train_set, double reg_alpha) {
  const auto ce = softmax_cross_entropy(head.logits(inputs), labels, train_set);
  LwayBaseline grad;
  grad.weights = inputs.transpose() * ce.d_logits + 2.0 * reg_alpha * head.weights;
  grad.bias = ce.d_logits.colwise().sum();
  return {ce.loss + reg_alpha * head.weights.squaredNorm(), grad.flatten()};
}

LwayBaseline lway_baseline(const PredictionBundle& bundle, std::span<const int> true_labels,
                           std::span<const int> train_set, const LwayOptions& options) {
  if (train_set.empty()) throw ValidationError("L-way baseline needs a nonempty training set");
  const auto l = bundle.y_hat.cols();
  const Matrix x = LwayBaseline::inputs(bundle);
  LwayBaseline head;
  Rng rng = make_stream(options.seed);
  head.weights.resize(3 * l, l);
  const double limit = std::sqrt(6.0 / static_cast<double>(4 * l));
  for (Eigen::Index i = 0; i < head.weights.size(); ++i) {
    head.weights.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
  }
  head.bias = RowVector::Zero(l);

  FlatAdam opt;
  Vector params = head.flatten();
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    auto [loss, grad] = lway_objective(head, x, true_labels, train_set, options.reg_alpha);
    if (!std::isfinite(loss)) {
      throw TrainingError("L-way baseline loss became non-finite at epoch " +
                          std::to_string(epoch + 1));
    }
    opt.update(params, grad, AdamConfig{options.lr});
    head.assign(params);
  }
  return head;
}

std::vector<int> ensemble_predict(const PredictionBundle& bundle) {
  return argmax_rows((bundle.y_hat + bundle.y_self) / 2.0);
}

void write_factors(const std::vector<FactorVector>& factors, const PredictionBundle& bundle,
                   const Graph& g, const ChoiceDataset& dataset,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<const char*> split(g.num_nodes(), "none");
  for (int i : g.splits().train) split[i] = "train";
  for (int i : g.splits().valid) split[i] = "valid";
  for (int i : g.splits().test) split[i] = "test";
  std::vector<int> p(g.num_nodes(), 0);
  for (const auto& r : dataset.rows) p[r.node] = r.p;

  out << "node,split,label,z_hat,z_self";
  for (auto name : FactorVector::kNames) out << ',' << name;
  out << ",p\n";
  out << std::setprecision(17);
  for (int i = 0; i < g.num_nodes(); ++i) {
    out << i << ',' << split[i] << ',' << g.labels()[i] << ',' << bundle.z_hat[i] << ','
        << bundle.z_self[i];
    for (double v : factors[i].values()) out << ',' << v;
    out << ',';
    if (p[i] != 0) out << p[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cgi
