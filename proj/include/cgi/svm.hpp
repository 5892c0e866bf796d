#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cgi/graph.hpp"
#include "cgi/nn.hpp"

namespace cgi {

/// K_ij = exp(-gamma ||x_i - y_j||^2) between the rows of `a` and `b`.
Matrix rbf_kernel(const Matrix& a, const Matrix& b, double gamma);

struct SmoOptions {
  /// Stop when the maximal KKT violating pair gap falls below this.
  double tolerance = 1e-3;
  /// 0 selects max(10^7, 100 n).
  std::int64_t max_iterations = 0;
};

struct DualSolution {
  Vector alpha;
  double bias = 0.0;  // decision = sum_i y_i alpha_i K(x_i, x) + bias
  double objective = 0.0;
  double gap = 0.0;
  std::int64_t iterations = 0;
};

/// Sequential minimal optimization with second-order working-set selection
/// for
///   min 1/2 a^T Q a - sum(a)  s.t.  y^T a = 0,  0 <= a <= C,
/// with Q_ij = y_i y_j K_ij. Labels are +1/-1.
DualSolution solve_svm_dual(const Matrix& kernel, std::span<const int> y, double c,
                            const SmoOptions& options = {});

/// Kernel machine on already standardized inputs.
struct SvmFit {
  Matrix support_vectors;
  Vector dual_coefs;  // alpha_i * y_i
  double bias = 0.0;
  double gamma = 1.0;
  /// Set when the training data held a single class; decision is then the
  /// constant +1 or -1.
  int constant_label = 0;

  double decision(const Eigen::Ref<const RowVector>& x) const;
};

SvmFit fit_svm(const Matrix& x, std::span<const int> y, double c, double gamma,
               const SmoOptions& options = {});

struct CvEntry {
  double c = 0.0;
  double gamma = 0.0;
  double accuracy = 0.0;
};

struct ChoiceTrainOptions {
  std::vector<double> c_grid{0.1, 1.0, 10.0, 100.0};
  std::vector<double> gamma_grid{0.01, 0.1, 1.0, 10.0};
  int folds = 5;
  std::uint64_t seed = 0;
  SmoOptions smo;
};

/// RBF support-vector classifier over standardized factor columns.
struct ChoiceModel {
  std::vector<std::string> feature_names;
  RowVector mean;
  RowVector scale;
  Matrix support_vectors;  // standardized
  Vector dual_coefs;
  double bias = 0.0;
  double gamma = 1.0;
  double c_penalty = 1.0;
  std::vector<CvEntry> cv_table;
  double cv_accuracy = 0.0;

  int dim() const { return static_cast<int>(mean.size()); }
  RowVector standardize(const Eigen::Ref<const RowVector>& raw) const;
  double decision(const Eigen::Ref<const RowVector>& raw) const;
};

/// Stratified fold id per row; classes are dealt round-robin after a seeded
/// shuffle.
std::vector<int> stratified_folds(std::span<const int> y, int folds, std::uint64_t seed);

/// Cross-validated accuracy of one (C, gamma) pair on standardized data.
double cross_validate(const Matrix& x_std, std::span<const int> y, std::span<const int> fold_of,
                      int folds, double c, double gamma, const SmoOptions& options = {});

/// Grid search by stratified k-fold accuracy (ties: smaller C, then smaller
/// gamma) followed by a refit on all rows. Labels are +1/-1.
ChoiceModel train_choice_model(const Matrix& x, std::span<const int> y,
                               std::vector<std::string> feature_names,
                               const ChoiceTrainOptions& options = {});

void save_choice_model(const ChoiceModel& model, const std::filesystem::path& path);
ChoiceModel load_choice_model(const std::filesystem::path& path);

}  // namespace cgi
