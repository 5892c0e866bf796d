#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cgi/graph.hpp"
#include "cgi/rng.hpp"

namespace cgi {

using RowVector = Eigen::RowVectorXd;

/// Two-layer perceptron weights: x -> relu(x W1 + b1) W2 + b2.
struct MlpParams {
  Matrix w1;     // D x H
  RowVector b1;  // H
  Matrix w2;     // H x L
  RowVector b2;  // L

  int input_dim() const { return static_cast<int>(w1.rows()); }
  int hidden_dim() const { return static_cast<int>(w1.cols()); }
  int output_dim() const { return static_cast<int>(w2.cols()); }

  static MlpParams zeros(int input_dim, int hidden_dim, int output_dim);
  /// Glorot-uniform weights, zero biases.
  static MlpParams glorot(int input_dim, int hidden_dim, int output_dim, Rng& rng);

  std::size_t size() const;
  /// Concatenation w1, b1, w2, b2, each row-major.
  Vector flatten() const;
  void assign(const Vector& flat);
  bool all_finite() const;
};

/// Parameter blocks affected by weight decay.
struct L2Blocks {
  bool w1 = true;
  bool b1 = false;
  bool w2 = false;
  bool b2 = false;

  static L2Blocks all() { return {true, true, true, true}; }
};

enum class Phase { kTrain, kEval };

/// Intermediate values kept by mlp_forward for the backward pass.
struct MlpCache {
  Matrix input;       // dropped-out input actually fed to the first layer
  Matrix pre_hidden;  // x W1 + b1
  Matrix input_mask;  // inverted-dropout scale per input entry (empty in eval)
  Matrix hidden_mask;
  Matrix hidden;      // relu output after dropout
  Matrix logits;
};

MlpCache mlp_forward(const MlpParams& params, const Matrix& x, double dropout_rate, Phase phase,
                     Rng* rng = nullptr);

/// Gradient of (upstream loss) + l2_lambda * ||selected blocks||_F^2.
MlpParams mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& d_logits,
                       double l2_lambda, L2Blocks blocks = {});

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

struct LossAndGrad {
  double loss = 0.0;
  Matrix d_logits;
};

/// Mean cross-entropy over `index_set`; gradient rows outside the set are 0.
LossAndGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                  std::span<const int> index_set);

/// Argmax per row, smallest index on ties.
std::vector<int> argmax_rows(const Matrix& m);

double accuracy(std::span<const int> predicted, std::span<const int> labels,
                std::span<const int> index_set);

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  MlpParams m;
  MlpParams v;
  std::int64_t step = 0;

  static OptState like(const MlpParams& p);
};

void adam_step(MlpParams& params, const MlpParams& grads, OptState& state,
               const AdamConfig& config = {});

/// Adam on a flat vector; used by the small heads trained outside MlpParams.
struct FlatAdam {
  Vector m;
  Vector v;
  std::int64_t step = 0;

  void update(Vector& params, const Vector& grads, const AdamConfig& config = {});
};

struct GradientCheckOptions {
  double epsilon = 1e-6;
  /// Coordinates checked; every coordinate when the vector is shorter.
  std::size_t num_coords = 200;
  std::uint64_t seed = 0;
};

/// Max relative error |g_a - g_n| / max(|g_a|, |g_n|, 1e-8) over a random
/// coordinate sample (all coordinates when there are few enough), where g_n
/// is a central difference of `loss`.
double finite_difference_check(const std::function<double(const Vector&)>& loss,
                               const Vector& analytic_grad, const Vector& params,
                               const GradientCheckOptions& options = {});

}  // namespace cgi
