#include "cgi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgi/error.hpp"

namespace cgi {

MlpParams MlpParams::zeros(int input_dim, int hidden_dim, int output_dim) {
  return {Matrix::Zero(input_dim, hidden_dim), RowVector::Zero(hidden_dim),
          Matrix::Zero(hidden_dim, output_dim), RowVector::Zero(output_dim)};
}

MlpParams MlpParams::glorot(int input_dim, int hidden_dim, int output_dim, Rng& rng) {
  auto p = zeros(input_dim, hidden_dim, output_dim);
  auto fill = [&rng](Matrix& w) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
    }
  };
  fill(p.w1);
  fill(p.w2);
  return p;
}

std::size_t MlpParams::size() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

Vector MlpParams::flatten() const {
  Vector flat(size());
  Eigen::Index at = 0;
  auto put = [&](const double* data, Eigen::Index n) {
    std::copy(data, data + n, flat.data() + at);
    at += n;
  };
  put(w1.data(), w1.size());
  put(b1.data(), b1.size());
  put(w2.data(), w2.size());
  put(b2.data(), b2.size());
  return flat;
}

void MlpParams::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != size()) {
    throw DimensionError("flat parameter vector has wrong length");
  }
  Eigen::Index at = 0;
  auto take = [&](double* data, Eigen::Index n) {
    std::copy(flat.data() + at, flat.data() + at + n, data);
    at += n;
  };
  take(w1.data(), w1.size());
  take(b1.data(), b1.size());
  take(w2.data(), w2.size());
  take(b2.data(), b2.size());
}

bool MlpParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

namespace {

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) mask(i, j) = uniform01(rng) < rate ? 0.0 : scale;
  }
  return mask;
}

}  // namespace

MlpCache mlp_forward(const MlpParams& params, const Matrix& x, double dropout_rate, Phase phase,
                     Rng* rng) {
  if (x.cols() != params.w1.rows()) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, W1 expects " +
                         std::to_string(params.w1.rows()));
  }
  if (params.b1.size() != params.w1.cols() || params.w2.rows() != params.w1.cols() ||
      params.b2.size() != params.w2.cols()) {
    throw DimensionError("inconsistent perceptron parameter shapes");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("dropout rate must lie in [0, 1)");
  }
  const bool drop = phase == Phase::kTrain && dropout_rate > 0.0;
  if (drop && rng == nullptr) throw ValidationError("training-phase dropout needs a stream");

  MlpCache c;
  if (drop) {
    c.input_mask = dropout_mask(x.rows(), x.cols(), dropout_rate, *rng);
    c.input = x.cwiseProduct(c.input_mask);
  } else {
    c.input = x;
  }
  c.pre_hidden = (c.input * params.w1).rowwise() + params.b1;
  c.hidden = c.pre_hidden.cwiseMax(0.0);
  if (drop) {
    c.hidden_mask = dropout_mask(c.hidden.rows(), c.hidden.cols(), dropout_rate, *rng);
    c.hidden = c.hidden.cwiseProduct(c.hidden_mask);
  }
  c.logits = (c.hidden * params.w2).rowwise() + params.b2;
  return c;
}

MlpParams mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& d_logits,
                       double l2_lambda, L2Blocks blocks) {
  if (d_logits.rows() != cache.logits.rows() || d_logits.cols() != cache.logits.cols()) {
    throw DimensionError("upstream gradient shape does not match cached logits");
  }
  MlpParams g;
  g.w2 = cache.hidden.transpose() * d_logits;
  g.b2 = d_logits.colwise().sum();
  Matrix d_hidden = d_logits * params.w2.transpose();
  if (cache.hidden_mask.size() > 0) d_hidden = d_hidden.cwiseProduct(cache.hidden_mask);
  const Matrix d_pre =
      d_hidden.cwiseProduct((cache.pre_hidden.array() > 0.0).cast<double>().matrix());
  g.w1 = cache.input.transpose() * d_pre;
  g.b1 = d_pre.colwise().sum();

  if (l2_lambda != 0.0) {
    const double k = 2.0 * l2_lambda;
    if (blocks.w1) g.w1 += k * params.w1;
    if (blocks.b1) g.b1 += k * params.b1;
    if (blocks.w2) g.w2 += k * params.w2;
    if (blocks.b2) g.b2 += k * params.b2;
  }
  return g;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

LossAndGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                  std::span<const int> index_set) {
  if (index_set.empty()) throw ValidationError("cross-entropy over an empty index set");
  LossAndGrad out;
  out.d_logits = Matrix::Zero(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(index_set.size());
  for (int i : index_set) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) {
      throw ValidationError("node " + std::to_string(i) + " has no valid label");
    }
    const double m = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - m).eval();
    const double log_z = std::log(shifted.exp().sum());
    out.loss += (log_z - shifted(y)) * inv;
    out.d_logits.row(i) = (shifted - log_z).exp().matrix() * inv;
    out.d_logits(i, y) -= inv;
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = static_cast<int>(j);
    }
    out[i] = best;
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels,
                std::span<const int> index_set) {
  if (index_set.empty()) return 0.0;
  std::size_t hits = 0;
  for (int i : index_set) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(index_set.size());
}

OptState OptState::like(const MlpParams& p) {
  return {MlpParams::zeros(p.input_dim(), p.hidden_dim(), p.output_dim()),
          MlpParams::zeros(p.input_dim(), p.hidden_dim(), p.output_dim()), 0};
}

namespace {

template <typename Block>
void adam_block(Block& param, const Block& grad, Block& m, Block& v, std::int64_t step,
                const AdamConfig& c) {
  const auto t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  param.array() -= c.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + c.eps);
}

void require_finite(bool ok, const char* block) {
  if (!ok) throw NumericalError(std::string("non-finite gradient in block ") + block);
}

}  // namespace

void adam_step(MlpParams& params, const MlpParams& grads, OptState& state,
               const AdamConfig& config) {
  if (grads.w1.rows() != params.w1.rows() || grads.w1.cols() != params.w1.cols() ||
      grads.w2.rows() != params.w2.rows() || grads.w2.cols() != params.w2.cols() ||
      grads.b1.size() != params.b1.size() || grads.b2.size() != params.b2.size()) {
    throw DimensionError("gradient shapes do not match parameters");
  }
  require_finite(grads.w1.allFinite(), "w1");
  require_finite(grads.b1.allFinite(), "b1");
  require_finite(grads.w2.allFinite(), "w2");
  require_finite(grads.b2.allFinite(), "b2");

  ++state.step;
  const auto t = state.step;
  adam_block(params.w1, grads.w1, state.m.w1, state.v.w1, t, config);
  adam_block(params.b1, grads.b1, state.m.b1, state.v.b1, t, config);
  adam_block(params.w2, grads.w2, state.m.w2, state.v.w2, t, config);
  adam_block(params.b2, grads.b2, state.m.b2, state.v.b2, t, config);
}

void FlatAdam::update(Vector& params, const Vector& grads, const AdamConfig& config) {
  if (!grads.allFinite()) throw NumericalError("non-finite gradient");
  if (m.size() != params.size()) {
    m = Vector::Zero(params.size());
    v = Vector::Zero(params.size());
    step = 0;
  }
  ++step;
  adam_block(params, grads, m, v, step, config);
}

double finite_difference_check(const std::function<double(const Vector&)>& loss,
                               const Vector& analytic_grad, const Vector& params,
                               const GradientCheckOptions& options) {
  if (analytic_grad.size() != params.size()) {
    throw DimensionError("gradient and parameter vectors differ in length");
  }
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(params.size()));
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  if (coords.size() > options.num_coords) {
    Rng rng = make_stream(options.seed);
    shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.num_coords);
  }
  double worst = 0.0;
  Vector probe = params;
  for (Eigen::Index k : coords) {
    const double saved = probe(k);
    probe(k) = saved + options.epsilon;
    const double up = loss(probe);
    probe(k) = saved - options.epsilon;
    const double down = loss(probe);
    probe(k) = saved;
    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double a = analytic_grad(k);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace cgi
