#include "cgi/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "cgi/error.hpp"

namespace cgi {

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double gamma) {
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      k(i, j) = std::exp(-gamma * (a.row(i) - b.row(j)).squaredNorm());
    }
  }
  return k;
}

DualSolution solve_svm_dual(const Matrix& kernel, std::span<const int> y, double c,
                            const SmoOptions& options) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (kernel.rows() != n || kernel.cols() != n) {
    throw DimensionError("kernel matrix does not match label count");
  }
  if (!(c > 0.0)) throw ValidationError("penalty C must be positive");
  bool has_pos = false, has_neg = false;
  for (int v : y) {
    if (v == 1) has_pos = true;
    else if (v == -1) has_neg = true;
    else throw ValidationError("SVM labels must be +1 or -1");
  }
  if (!has_pos || !has_neg) throw TrainingError("SVM training data holds a single class");

  constexpr double kTau = 1e-12;
  Vector alpha = Vector::Zero(n);
  Vector grad = Vector::Constant(n, -1.0);  // Q alpha - e
  auto yd = [&](Eigen::Index t) { return static_cast<double>(y[t]); };
  auto q = [&](Eigen::Index a, Eigen::Index b) { return yd(a) * yd(b) * kernel(a, b); };
  auto in_up = [&](Eigen::Index t) {
    return (y[t] == 1 && alpha(t) < c) || (y[t] == -1 && alpha(t) > 0.0);
  };
  auto in_low = [&](Eigen::Index t) {
    return (y[t] == 1 && alpha(t) > 0.0) || (y[t] == -1 && alpha(t) < c);
  };

  const std::int64_t cap = options.max_iterations > 0
                               ? options.max_iterations
                               : std::max<std::int64_t>(10'000'000, 100 * n);
  DualSolution sol;
  double gap = 0.0;
  std::int64_t iter = 0;
  for (;; ++iter) {
    // Working set: i maximizes -y G over I_up; j minimizes the second-order
    // decrease over I_low.
    double g_max = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (in_up(t) && -yd(t) * grad(t) > g_max) {
        g_max = -yd(t) * grad(t);
        i = t;
      }
    }
    double g_min = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -yd(t) * grad(t);
      g_min = std::min(g_min, v);
      if (i < 0) continue;
      const double b = g_max - v;
      if (b > 0.0) {
        double a = kernel(i, i) + kernel(t, t) - 2.0 * kernel(i, t);
        if (a <= 0.0) a = kTau;
        const double obj = -(b * b) / a;
        if (obj < best_obj) {
          best_obj = obj;
          j = t;
        }
      }
    }
    gap = g_max - g_min;
    if (i < 0 || j < 0 || gap < options.tolerance) break;
    if (iter >= cap) {
      throw SolverError("SMO did not converge within " + std::to_string(cap) +
                        " iterations; KKT gap " + std::to_string(gap));
    }

    const double old_i = alpha(i);
    const double old_j = alpha(j);
    if (y[i] != y[j]) {
      double quad = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad(i) - grad(j)) / quad;
      const double diff = alpha(i) - alpha(j);
      alpha(i) += delta;
      alpha(j) += delta;
      if (diff > 0.0) {
        if (alpha(j) < 0.0) {
          alpha(j) = 0.0;
          alpha(i) = diff;
        }
      } else {
        if (alpha(i) < 0.0) {
          alpha(i) = 0.0;
          alpha(j) = -diff;
        }
      }
      if (diff > 0.0) {
        if (alpha(i) > c) {
          alpha(i) = c;
          alpha(j) = c - diff;
        }
      } else {
        if (alpha(j) > c) {
          alpha(j) = c;
          alpha(i) = c + diff;
        }
      }
    } else {
      double quad = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad(i) - grad(j)) / quad;
      const double sum = alpha(i) + alpha(j);
      alpha(i) -= delta;
      alpha(j) += delta;
      if (sum > c) {
        if (alpha(i) > c) {
          alpha(i) = c;
          alpha(j) = sum - c;
        }
      } else {
        if (alpha(j) < 0.0) {
          alpha(j) = 0.0;
          alpha(i) = sum;
        }
      }
      if (sum > c) {
        if (alpha(j) > c) {
          alpha(j) = c;
          alpha(i) = sum - c;
        }
      } else {
        if (alpha(i) < 0.0) {
          alpha(i) = 0.0;
          alpha(j) = sum;
        }
      }
    }
    const double d_i = alpha(i) - old_i;
    const double d_j = alpha(j) - old_j;
    for (Eigen::Index t = 0; t < n; ++t) grad(t) += q(t, i) * d_i + q(t, j) * d_j;
  }

  // Offset: mean of y G over free variables, else midpoint of the feasible
  // interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  int free_count = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = yd(t) * grad(t);
    if (alpha(t) >= c) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha(t) <= 0.0) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  const double rho = free_count > 0 ? free_sum / free_count : (ub + lb) / 2.0;

  sol.alpha = std::move(alpha);
  sol.bias = -rho;
  sol.objective = 0.5 * sol.alpha.dot(grad - Vector::Ones(n));
  sol.gap = gap;
  sol.iterations = iter;
  return sol;
}

double SvmFit::decision(const Eigen::Ref<const RowVector>& x) const {
  if (constant_label != 0) return static_cast<double>(constant_label);
  double f = bias;
  for (Eigen::Index i = 0; i < support_vectors.rows(); ++i) {
    f += dual_coefs(i) * std::exp(-gamma * (support_vectors.row(i) - x).squaredNorm());
  }
  return f;
}

SvmFit fit_svm(const Matrix& x, std::span<const int> y, double c, double gamma,
               const SmoOptions& options) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) {
    throw DimensionError("SVM inputs and labels differ in length");
  }
  if (x.rows() == 0) throw ValidationError("SVM training data is empty");
  SvmFit fit;
  fit.gamma = gamma;
  const bool all_same = std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; });
  if (all_same) {
    fit.constant_label = y[0];
    return fit;
  }
  const auto sol = solve_svm_dual(rbf_kernel(x, x, gamma), y, c, options);
  std::vector<Eigen::Index> sv;
  for (Eigen::Index i = 0; i < sol.alpha.size(); ++i) {
    if (sol.alpha(i) > 0.0) sv.push_back(i);
  }
  fit.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  fit.dual_coefs.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    fit.support_vectors.row(k) = x.row(sv[k]);
    fit.dual_coefs(k) = sol.alpha(sv[k]) * y[sv[k]];
  }
  fit.bias = sol.bias;
  return fit;
}

std::vector<int> stratified_folds(std::span<const int> y, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  std::vector<int> fold_of(y.size(), 0);
  Rng rng = make_stream(seed);
  int dealt = 0;
  for (int label : {1, -1}) {
    std::vector<int> members;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == label) members.push_back(static_cast<int>(i));
    }
    shuffle(members.begin(), members.end(), rng);
    for (int m : members) fold_of[m] = dealt++ % folds;
  }
  return fold_of;
}

double cross_validate(const Matrix& x_std, std::span<const int> y, std::span<const int> fold_of,
                      int folds, double c, double gamma, const SmoOptions& options) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < y.size(); ++i) (fold_of[i] == f ? te : tr).push_back(i);
    if (te.empty() || tr.empty()) continue;
    Matrix xt(static_cast<Eigen::Index>(tr.size()), x_std.cols());
    std::vector<int> yt(tr.size());
    for (std::size_t k = 0; k < tr.size(); ++k) {
      xt.row(k) = x_std.row(tr[k]);
      yt[k] = y[tr[k]];
    }
    const auto fit = fit_svm(xt, yt, c, gamma, options);
    for (auto i : te) {
      const int pred = fit.decision(x_std.row(i)) >= 0.0 ? 1 : -1;
      correct += pred == y[i] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

RowVector ChoiceModel::standardize(const Eigen::Ref<const RowVector>& raw) const {
  if (raw.size() != mean.size()) {
    throw DimensionError("choice model expects " + std::to_string(mean.size()) + " factors, got " +
                         std::to_string(raw.size()));
  }
  return (raw - mean).cwiseQuotient(scale);
}

double ChoiceModel::decision(const Eigen::Ref<const RowVector>& raw) const {
  const RowVector x = standardize(raw);
  double f = bias;
  for (Eigen::Index i = 0; i < support_vectors.rows(); ++i) {
    f += dual_coefs(i) * std::exp(-gamma * (support_vectors.row(i) - x).squaredNorm());
  }
  return f;
}

ChoiceModel train_choice_model(const Matrix& x, std::span<const int> y,
                               std::vector<std::string> feature_names,
                               const ChoiceTrainOptions& options) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) {
    throw DimensionError("choice inputs and labels differ in length");
  }
  if (x.cols() == 0) throw ValidationError("choice model needs at least one factor");
  if (options.c_grid.empty() || options.gamma_grid.empty()) {
    throw ValidationError("empty hyper-parameter grid");
  }
  const auto positives = std::count(y.begin(), y.end(), 1);
  const auto negatives = std::count(y.begin(), y.end(), -1);
  if (positives + negatives != static_cast<std::ptrdiff_t>(y.size())) {
    throw ValidationError("choice labels must be +1 or -1");
  }
  if (positives == 0 || negatives == 0) {
    throw TrainingError("choice data holds a single class");
  }

  ChoiceModel model;
  model.feature_names = std::move(feature_names);
  const auto m = static_cast<double>(x.rows());
  model.mean = x.colwise().mean();
  model.scale = ((x.rowwise() - model.mean).array().square().colwise().sum() / m).sqrt().matrix();
  for (Eigen::Index j = 0; j < model.scale.size(); ++j) {
    if (!(model.scale(j) > 1e-12)) model.scale(j) = 1.0;
  }
  const Matrix x_std = (x.rowwise() - model.mean).array().rowwise() / model.scale.array();

  const int folds = std::clamp(options.folds, 2, static_cast<int>(x.rows()));
  const auto fold_of = stratified_folds(y, folds, options.seed);
  auto c_grid = options.c_grid;
  auto g_grid = options.gamma_grid;
  std::sort(c_grid.begin(), c_grid.end());
  std::sort(g_grid.begin(), g_grid.end());
  double best_acc = -1.0;
  for (double c : c_grid) {
    for (double g : g_grid) {
      const double acc = cross_validate(x_std, y, fold_of, folds, c, g, options.smo);
      model.cv_table.push_back({c, g, acc});
      if (acc > best_acc) {
        best_acc = acc;
        model.c_penalty = c;
        model.gamma = g;
      }
    }
  }
  model.cv_accuracy = best_acc;

  const auto fit = fit_svm(x_std, y, model.c_penalty, model.gamma, options.smo);
  model.support_vectors = fit.support_vectors;
  model.dual_coefs = fit.dual_coefs;
  model.bias = fit.bias;
  return model;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kChoiceFormat = "cgi-choice-model";
constexpr int kChoiceVersion = 1;

std::vector<double> to_std(const Eigen::Ref<const RowVector>& v) {
  return {v.data(), v.data() + v.size()};
}

}  // namespace

void save_choice_model(const ChoiceModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kChoiceFormat;
  j["version"] = kChoiceVersion;
  j["feature_names"] = model.feature_names;
  j["standardization"] = {{"mean", to_std(model.mean)}, {"scale", to_std(model.scale)}};
  nlohmann::json sv = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.support_vectors.rows(); ++i) {
    sv.push_back(to_std(model.support_vectors.row(i)));
  }
  j["support_vectors"] = std::move(sv);
  j["dual_coefs"] = std::vector<double>(model.dual_coefs.data(),
                                        model.dual_coefs.data() + model.dual_coefs.size());
  j["bias"] = model.bias;
  j["c"] = model.c_penalty;
  j["gamma"] = model.gamma;
  j["cv_accuracy"] = model.cv_accuracy;
  nlohmann::json cv = nlohmann::json::array();
  for (const auto& e : model.cv_table) {
    cv.push_back({{"c", e.c}, {"gamma", e.gamma}, {"accuracy", e.accuracy}});
  }
  j["cv_table"] = std::move(cv);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

ChoiceModel load_choice_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("format").get<std::string>() != kChoiceFormat ||
        j.at("version").get<int>() != kChoiceVersion) {
      throw ParseError(path.string() + ": not a supported choice-model file");
    }
    ChoiceModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    const auto mean = j.at("standardization").at("mean").get<std::vector<double>>();
    const auto scale = j.at("standardization").at("scale").get<std::vector<double>>();
    if (mean.size() != scale.size()) throw ParseError(path.string() + ": bad standardization");
    m.mean = Eigen::Map<const RowVector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.scale = Eigen::Map<const RowVector>(scale.data(), static_cast<Eigen::Index>(scale.size()));
    const auto sv = j.at("support_vectors").get<std::vector<std::vector<double>>>();
    m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), m.mean.size());
    for (std::size_t i = 0; i < sv.size(); ++i) {
      if (sv[i].size() != mean.size()) throw ParseError(path.string() + ": bad support vector");
      for (std::size_t k = 0; k < sv[i].size(); ++k) m.support_vectors(i, k) = sv[i][k];
    }
    const auto coefs = j.at("dual_coefs").get<std::vector<double>>();
    if (coefs.size() != sv.size()) throw ParseError(path.string() + ": bad dual coefficients");
    m.dual_coefs = Eigen::Map<const Vector>(coefs.data(), static_cast<Eigen::Index>(coefs.size()));
    m.bias = j.at("bias").get<double>();
    m.c_penalty = j.at("c").get<double>();
    m.gamma = j.at("gamma").get<double>();
    m.cv_accuracy = j.value("cv_accuracy", 0.0);
    for (const auto& e : j.value("cv_table", nlohmann::json::array())) {
      m.cv_table.push_back({e.at("c"), e.at("gamma"), e.at("accuracy")});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace cgi
