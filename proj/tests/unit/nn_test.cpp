#include <cmath>

#include "doctest.h"

#include "cgi/error.hpp"
#include "cgi/nn.hpp"

using namespace cgi;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return m;
}

}  // namespace

TEST_CASE("forward pass on hand-sized inputs") {
  MlpParams p = MlpParams::zeros(1, 1, 1);
  p.w1(0, 0) = 3.0;
  p.b1(0) = -1.0;
  p.w2(0, 0) = 1.0;
  Matrix x(1, 1);
  x(0, 0) = 2.0;
  CHECK(mlp_forward(p, x, 0.5, Phase::kEval, nullptr).logits(0, 0) == doctest::Approx(5.0));

  x(0, 0) = -2.0;
  const auto cache = mlp_forward(p, x, 0.0, Phase::kEval, nullptr);
  CHECK(cache.hidden(0, 0) == 0.0);

  const auto zero = MlpParams::zeros(4, 3, 5);
  Rng rng = make_stream(1);
  const Matrix probs = softmax_rows(mlp_forward(zero, random_matrix(6, 4, rng), 0.0, Phase::kEval,
                                                nullptr).logits);
  CHECK((probs.array() - 0.2).abs().maxCoeff() < 1e-15);
}

TEST_CASE("forward rejects mismatched shapes") {
  const auto p = MlpParams::zeros(4, 3, 2);
  CHECK_THROWS_AS(mlp_forward(p, Matrix::Zero(2, 5), 0.0, Phase::kEval, nullptr), DimensionError);
}

TEST_CASE("softmax rows are stable distributions") {
  Matrix logits(3, 3);
  logits << 1000, 999, -1000, 0, 0, 0, -745, -746, -740;
  const Matrix p = softmax_rows(logits);
  CHECK(p.allFinite());
  for (int i = 0; i < 3; ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p(1, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("cross-entropy values") {
  const std::vector<int> labels{0, 1, 2, 3};
  const std::vector<int> all{0, 1, 2, 3};
  const auto uniform = softmax_cross_entropy(Matrix::Zero(4, 4), labels, all);
  CHECK(uniform.loss == doctest::Approx(std::log(4.0)));

  Matrix one(1, 2);
  one << 1.0, 0.0;
  const std::vector<int> label0{0};
  const std::vector<int> node0{0};
  CHECK(softmax_cross_entropy(one, label0, node0).loss ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))));

  Matrix sharp(1, 2);
  sharp << 60.0, 0.0;
  CHECK(softmax_cross_entropy(sharp, label0, node0).loss < 1e-20);

  const std::vector<int> some{1, 3};
  const auto partial = softmax_cross_entropy(Matrix::Ones(4, 4), labels, some);
  CHECK(partial.d_logits.row(0).isZero());
  CHECK(partial.d_logits.row(2).isZero());
  CHECK_FALSE(partial.d_logits.row(1).isZero());

  const std::vector<int> none;
  CHECK_THROWS_AS(softmax_cross_entropy(Matrix::Zero(4, 4), labels, none), ValidationError);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng = make_stream(3);
  const Matrix logits = random_matrix(5, 3, rng, 2.0);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  const std::vector<int> idx{0, 1, 3};
  const auto analytic = softmax_cross_entropy(logits, labels, idx);
  Vector flat = Eigen::Map<const Vector>(logits.data(), logits.size());
  Vector grad = Eigen::Map<const Vector>(analytic.d_logits.data(), logits.size());
  auto loss = [&](const Vector& v) {
    Matrix m = Eigen::Map<const Matrix>(v.data(), 5, 3);
    return softmax_cross_entropy(m, labels, idx).loss;
  };
  CHECK(finite_difference_check(loss, grad, flat) < 1e-7);
}

TEST_CASE("backward pass") {
  Rng rng = make_stream(5);
  auto p = MlpParams::glorot(4, 6, 3, rng);
  const Matrix x = random_matrix(10, 4, rng);

  SUBCASE("zero upstream gradient without decay is zero") {
    const auto cache = mlp_forward(p, x, 0.0, Phase::kEval, nullptr);
    const auto g = mlp_backward(p, cache, Matrix::Zero(10, 3), 0.0, L2Blocks{});
    CHECK(g.flatten().isZero());
  }
  SUBCASE("decay alone is 2 lambda params on selected blocks") {
    const auto cache = mlp_forward(p, x, 0.0, Phase::kEval, nullptr);
    const auto g = mlp_backward(p, cache, Matrix::Zero(10, 3), 0.1, L2Blocks{});
    CHECK(g.w1.isApprox(0.2 * p.w1));
    CHECK(g.w2.isZero());
    const auto all = mlp_backward(p, cache, Matrix::Zero(10, 3), 0.1, L2Blocks::all());
    CHECK(all.w2.isApprox(0.2 * p.w2));
  }
  SUBCASE("matches central differences with frozen dropout") {
    p.b1 = random_matrix(1, 6, rng, 0.1);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    const std::vector<int> idx{0, 1, 2, 3, 4, 5, 6, 7};
    const double lambda = 5e-3;
    auto loss = [&](const Vector& v) {
      MlpParams q = p;
      q.assign(v);
      Rng frozen = make_stream(17, 1);
      const auto c = mlp_forward(q, x, 0.3, Phase::kTrain, &frozen);
      return softmax_cross_entropy(c.logits, labels, idx).loss + lambda * q.w1.squaredNorm();
    };
    Rng frozen = make_stream(17, 1);
    const auto cache = mlp_forward(p, x, 0.3, Phase::kTrain, &frozen);
    const auto ce = softmax_cross_entropy(cache.logits, labels, idx);
    const auto g = mlp_backward(p, cache, ce.d_logits, lambda, L2Blocks{});
    CHECK(finite_difference_check(loss, g.flatten(), p.flatten()) < 1e-5);
  }
}

TEST_CASE("inverted dropout preserves the expected activation") {
  Rng rng = make_stream(8);
  const auto p = MlpParams::glorot(3, 4, 2, rng);
  const Matrix x = Matrix::Ones(1, 3);
  const Matrix eval = mlp_forward(p, x, 0.5, Phase::kEval, nullptr).input;
  Matrix sum = Matrix::Zero(1, 3);
  Rng masks = make_stream(8, 1);
  for (int k = 0; k < 10000; ++k) sum += mlp_forward(p, x, 0.5, Phase::kTrain, &masks).input;
  sum /= 10000.0;
  CHECK(((sum - eval).array().abs() / eval.array().abs()).maxCoeff() < 0.02);
}

TEST_CASE("argmax and accuracy") {
  Matrix m(3, 3);
  m << 1, 1, 0, 0, 2, 2, 5, 1, 5;
  CHECK(argmax_rows(m) == std::vector<int>{0, 1, 0});
  const std::vector<int> pred{0, 1, 0}, truth{0, 2, 0}, idx{0, 1};
  CHECK(accuracy(pred, truth, idx) == doctest::Approx(0.5));
}

TEST_CASE("adam") {
  SUBCASE("first step moves by about lr") {
    MlpParams p = MlpParams::zeros(1, 1, 1);
    MlpParams g = MlpParams::zeros(1, 1, 1);
    g.w1(0, 0) = 0.37;
    auto state = OptState::like(p);
    adam_step(p, g, state, AdamConfig{0.01});
    CHECK(p.w1(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradient keeps parameters") {
    Rng rng = make_stream(1);
    MlpParams p = MlpParams::glorot(3, 2, 2, rng);
    const Vector before = p.flatten();
    auto state = OptState::like(p);
    for (int k = 0; k < 20; ++k) adam_step(p, MlpParams::zeros(3, 2, 2), state);
    CHECK(p.flatten() == before);
  }
  SUBCASE("two constant steps follow the scalar recurrence") {
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = -1.7;
    double x = 0.4, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t));
      const double vh = v / (1 - std::pow(b2, t));
      x -= lr * mh / (std::sqrt(vh) + eps);
    }
    MlpParams p = MlpParams::zeros(1, 1, 1);
    p.b2(0) = 0.4;
    MlpParams grad = MlpParams::zeros(1, 1, 1);
    grad.b2(0) = g;
    auto state = OptState::like(p);
    adam_step(p, grad, state);
    adam_step(p, grad, state);
    CHECK(std::abs(p.b2(0) - x) < 1e-15);

    FlatAdam flat;
    Vector q = Vector::Constant(1, 0.4);
    flat.update(q, Vector::Constant(1, g));
    flat.update(q, Vector::Constant(1, g));
    CHECK(std::abs(q(0) - x) < 1e-15);
  }
  SUBCASE("non-finite gradient names the block") {
    MlpParams p = MlpParams::zeros(2, 2, 2);
    MlpParams g = MlpParams::zeros(2, 2, 2);
    g.w2(1, 0) = std::nan("");
    auto state = OptState::like(p);
    try {
      adam_step(p, g, state);
      FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("w2") != std::string::npos);
    }
  }
}

TEST_CASE("gradient checker") {
  Rng rng = make_stream(2);
  Vector p(300);
  for (auto& v : p) v = 2.0 * uniform01(rng) - 1.0;
  auto quad = [](const Vector& v) { return v.squaredNorm(); };
  CHECK(finite_difference_check(quad, 2.0 * p, p) < 1e-5);
  Vector wrong = 2.0 * p;
  // Corrupt every coordinate so the random sample is sure to hit one.
  wrong *= 2.0;
  CHECK(finite_difference_check(quad, wrong, p) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("parameter flattening round-trips") {
  Rng rng = make_stream(4);
  auto p = MlpParams::glorot(3, 5, 2, rng);
  p.b1.setConstant(0.25);
  CHECK(p.size() == 3 * 5 + 5 + 5 * 2 + 2);
  MlpParams q = MlpParams::zeros(3, 5, 2);
  q.assign(p.flatten());
  CHECK(q.flatten() == p.flatten());
  CHECK(p.flatten()(1) == p.w1(0, 1));
  CHECK_THROWS_AS(q.assign(Vector::Zero(3)), DimensionError);
  const double limit = std::sqrt(6.0 / 8.0);
  CHECK(p.w1.cwiseAbs().maxCoeff() <= limit);
}
