#pragma once

// Small graphs and dense reference computations shared by the test binaries.

#include <cmath>
#include <vector>

#include "cgi/appnp.hpp"
#include "cgi/graph.hpp"
#include "cgi/rng.hpp"

namespace testing_support {

using cgi::Matrix;

/// Erdos-Renyi graph with Gaussian-ish features and every node labeled.
/// Splits: first third train, second third valid, rest test.
inline cgi::Graph random_graph(int n, int classes, int dim, double p_edge, std::uint64_t seed) {
  cgi::Rng rng = cgi::make_stream(seed, 99);
  std::vector<cgi::Edge> edges;
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (cgi::uniform01(rng) < p_edge) edges.emplace_back(u, v);
    }
  }
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = static_cast<int>(cgi::uniform_index(rng, classes));
  for (int c = 0; c < classes && c < n; ++c) labels[c] = c;
  Matrix x(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) {
      x(i, d) = 2.0 * cgi::uniform01(rng) - 1.0 + (d % classes == labels[i] ? 1.0 : 0.0);
    }
  }
  cgi::Splits s;
  for (int i = 0; i < n; ++i) {
    if (i < n / 3) s.train.push_back(i);
    else if (i < 2 * n / 3) s.valid.push_back(i);
    else s.test.push_back(i);
  }
  return cgi::Graph(n, edges, std::move(x), std::move(labels), classes, std::move(s));
}

/// D^{-1/2}(A+I)D^{-1/2} built densely from an edge list.
inline Matrix dense_normalized(int n, const std::vector<cgi::Edge>& edges) {
  Matrix a = Matrix::Identity(n, n);
  for (auto [u, v] : edges) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  Eigen::VectorXd d = a.rowwise().sum();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) /= std::sqrt(d(i) * d(j));
  }
  return a;
}

inline Matrix dense_propagate(const Matrix& h, const Matrix& a, double alpha, int k) {
  Matrix z = h;
  for (int t = 0; t < k; ++t) z = (1.0 - alpha) * (a * z) + alpha * h;
  return z;
}

inline Matrix dense_softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - m);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) p(i, j) = std::exp(logits(i, j) - m) / z;
  }
  return p;
}

/// relu(x W1 + b1) W2 + b2 without dropout.
inline Matrix dense_mlp(const cgi::MlpParams& p, const Matrix& x) {
  Matrix h = x * p.w1;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) = std::max(0.0, h(i, j) + p.b1(j));
  }
  Matrix out = h * p.w2;
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) += p.b2;
  return out;
}

inline cgi::TrainConfig quick_train(std::uint64_t seed, int epochs = 30) {
  cgi::TrainConfig c;
  c.hidden = 8;
  c.epochs = epochs;
  c.patience = epochs;
  c.seed = seed;
  return c;
}

}  // namespace testing_support
