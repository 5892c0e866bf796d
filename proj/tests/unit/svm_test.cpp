#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "cgi/error.hpp"
#include "cgi/svm.hpp"
#include "../svm_oracle.hpp"

using namespace cgi;
using namespace testing_support;

namespace {

/// Two interleaved rings: inner disc labeled +1, outer ring -1.
void rings(int n, Rng& rng, Matrix& x, std::vector<int>& y) {
  x.resize(n, 2);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double angle = 6.283185307179586 * uniform01(rng);
    const double r = (i % 2 == 0) ? 0.8 * uniform01(rng) : 1.6 + 0.6 * uniform01(rng);
    x(i, 0) = r * std::cos(angle);
    x(i, 1) = r * std::sin(angle);
    y[i] = (i % 2 == 0) ? 1 : -1;
  }
}

void random_instance(int n, Rng& rng, Matrix& x, std::vector<int>& y) {
  x.resize(n, 3);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2 == 0 ? 1 : -1;
    for (int d = 0; d < 3; ++d) x(i, d) = 2.0 * uniform01(rng) - 1.0 + 0.4 * y[i];
  }
}

}  // namespace

TEST_CASE("rbf kernel values") {
  Matrix a(2, 2), b(1, 2);
  a << 0, 0, 1, 1;
  b << 1, 0;
  const Matrix k = rbf_kernel(a, b, 0.5);
  CHECK(k(0, 0) == doctest::Approx(std::exp(-0.5)));
  CHECK(k(1, 0) == doctest::Approx(std::exp(-0.5)));
  CHECK(rbf_kernel(a, a, 2.0).diagonal().isOnes());
}

TEST_CASE("two symmetric points") {
  Matrix x(2, 1);
  x << -1, 1;
  const std::vector<int> y{-1, 1};
  const auto fit = fit_svm(x, y, 10.0, 0.5);
  RowVector mid(1);
  mid << 0.0;
  CHECK(std::abs(fit.decision(mid)) < 1e-12);
  CHECK(fit.decision(x.row(0)) < 0.0);
  CHECK(fit.decision(x.row(1)) > 0.0);
  CHECK(std::abs(fit.dual_coefs.sum()) < 1e-12);
}

TEST_CASE("hand-built model evaluated at the midpoint returns the bias") {
  ChoiceModel m;
  m.mean = RowVector::Zero(2);
  m.scale = RowVector::Ones(2);
  m.support_vectors.resize(2, 2);
  m.support_vectors << 1, 0, -1, 0;
  m.dual_coefs.resize(2);
  m.dual_coefs << 0.8, -0.8;
  m.bias = 0.25;
  m.gamma = 0.7;
  CHECK(m.decision(RowVector::Zero(2)) == doctest::Approx(0.25));
  m.gamma = 1e-12;
  RowVector far(2);
  far << 3, -2;
  CHECK(m.decision(far) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("SMO agrees with a projected-gradient oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_stream(seed, 4);
    Matrix x;
    std::vector<int> y;
    random_instance(10, rng, x, y);
    const double c = seed % 2 == 0 ? 1.0 : 10.0;
    const Matrix k = rbf_kernel(x, x, 0.5);
    const auto smo = solve_svm_dual(k, y, c);
    const Vector ref = projected_gradient_dual(k, y, c);
    Matrix q(10, 10);
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) q(i, j) = y[i] * y[j] * k(i, j);
    CHECK(std::abs(smo.objective - dual_objective(q, ref)) < 1e-4);
    CHECK(smo.objective == doctest::Approx(dual_objective(q, smo.alpha)).epsilon(1e-9));
    double eq = 0.0;
    for (int i = 0; i < 10; ++i) eq += smo.alpha(i) * y[i];
    CHECK(std::abs(eq) < 1e-6);
    CHECK(smo.alpha.minCoeff() >= 0.0);
    CHECK(smo.alpha.maxCoeff() <= c);
    CHECK(kkt_violation(k, y, c, smo.alpha, smo.bias) < 1e-3);
  }
}

TEST_CASE("free support vectors sit on the margin") {
  Rng rng = make_stream(12);
  Matrix x;
  std::vector<int> y;
  random_instance(40, rng, x, y);
  const double c = 1.0;
  const Matrix k = rbf_kernel(x, x, 1.0);
  const auto sol = solve_svm_dual(k, y, c);
  int free = 0;
  for (int i = 0; i < 40; ++i) {
    if (sol.alpha(i) <= 1e-9 || sol.alpha(i) >= c - 1e-9) continue;
    ++free;
    double f = sol.bias;
    for (int j = 0; j < 40; ++j) f += sol.alpha(j) * y[j] * k(i, j);
    CHECK(std::abs(y[i] * f - 1.0) < 1e-2);
  }
  CHECK(free > 0);
}

TEST_CASE("rings are separated at some grid point") {
  Rng rng = make_stream(40);
  Matrix x;
  std::vector<int> y;
  rings(40, rng, x, y);
  bool perfect = false;
  for (double c : {0.1, 1.0, 10.0, 100.0}) {
    for (double g : {0.01, 0.1, 1.0, 10.0}) {
      const auto fit = fit_svm(x, y, c, g);
      int hits = 0;
      for (int i = 0; i < 40; ++i) hits += (fit.decision(x.row(i)) >= 0.0 ? 1 : -1) == y[i];
      perfect = perfect || hits == 40;
    }
  }
  CHECK(perfect);
}

TEST_CASE("solver errors") {
  Matrix k = Matrix::Identity(3, 3);
  const std::vector<int> same{1, 1, 1};
  CHECK_THROWS_AS(solve_svm_dual(k, same, 1.0), TrainingError);
  CHECK_THROWS_AS(train_choice_model(Matrix::Zero(3, 2), same, {"a", "b"}), TrainingError);

  Rng rng = make_stream(3);
  Matrix x;
  std::vector<int> y;
  random_instance(30, rng, x, y);
  SmoOptions capped;
  capped.max_iterations = 1;
  try {
    solve_svm_dual(rbf_kernel(x, x, 1.0), y, 10.0, capped);
    FAIL("expected a solver error");
  } catch (const SolverError& e) {
    CHECK(std::string(e.what()).find("gap") != std::string::npos);
  }
  const std::vector<int> bad{1, 0, -1};
  CHECK_THROWS_AS(solve_svm_dual(k, bad, 1.0), ValidationError);
}

TEST_CASE("stratified folds keep class balance") {
  std::vector<int> y;
  for (int i = 0; i < 23; ++i) y.push_back(i < 8 ? 1 : -1);
  const auto fold = stratified_folds(y, 5, 7);
  for (int f = 0; f < 5; ++f) {
    int pos = 0, neg = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (fold[i] != f) continue;
      (y[i] > 0 ? pos : neg)++;
    }
    CHECK(pos >= 1);
    CHECK(pos <= 2);
    CHECK(neg >= 3);
    CHECK(neg <= 4);
  }
  CHECK(stratified_folds(y, 5, 7) == fold);
}

TEST_CASE("grid search prefers the smaller penalty and width on ties") {
  Matrix x(12, 1);
  std::vector<int> y(12);
  for (int i = 0; i < 12; ++i) {
    y[i] = i < 6 ? 1 : -1;
    x(i, 0) = (i < 6 ? 1.0 : -1.0) + 0.01 * i;
  }
  ChoiceTrainOptions opt;
  opt.c_grid = {10.0, 1.0};
  opt.gamma_grid = {1.0, 0.1};
  opt.folds = 3;
  const auto m = train_choice_model(x, y, {"f"}, opt);
  CHECK(m.cv_accuracy == 1.0);
  CHECK(m.c_penalty == 1.0);
  CHECK(m.gamma == 0.1);
  CHECK(m.cv_table.size() == 4);
}

TEST_CASE("choice model standardizes and round-trips") {
  Rng rng = make_stream(5);
  Matrix x;
  std::vector<int> y;
  random_instance(30, rng, x, y);
  x.col(2).setConstant(4.0);
  x.col(1) *= 1000.0;
  const auto m = train_choice_model(x, y, {"a", "b", "c"});
  CHECK(m.scale(2) == 1.0);
  CHECK(m.mean(2) == 4.0);
  CHECK(m.standardize(x.row(0))(1) ==
        doctest::Approx((x(0, 1) - m.mean(1)) / m.scale(1)));

  const auto path = std::filesystem::temp_directory_path() / "cgi_choice_model.json";
  save_choice_model(m, path);
  const auto back = load_choice_model(path);
  std::filesystem::remove(path);
  CHECK(back.feature_names == m.feature_names);
  CHECK(back.c_penalty == m.c_penalty);
  CHECK(back.cv_table.size() == m.cv_table.size());
  for (int i = 0; i < 30; ++i) CHECK(back.decision(x.row(i)) == m.decision(x.row(i)));
}

TEST_CASE("single-class folds fall back to a constant vote") {
  Matrix x(3, 1);
  x << 0, 1, 2;
  const std::vector<int> y{1, 1, 1};
  const auto fit = fit_svm(x, y, 1.0, 1.0);
  CHECK(fit.constant_label == 1);
  CHECK(fit.decision(x.row(0)) > 0.0);
}
