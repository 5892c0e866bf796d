#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cgi/rng.hpp"

namespace cgi {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline constexpr int kUnlabeled = -1;

using Edge = std::pair<int, int>;

struct Splits {
  std::vector<int> train;
  std::vector<int> valid;
  std::vector<int> test;
};

/// Counts of input entries dropped while building the adjacency.
struct EdgeCleanup {
  int self_loops = 0;
  int duplicates = 0;
};

/// Undirected, unweighted graph with node features, labels and splits.
/// Immutable after construction. The adjacency is CSR with sorted column
/// indices, each undirected edge stored in both directions.
class Graph {
 public:
  Graph() = default;

  /// Builds and validates a graph. Self-loops and repeated edges in `edges`
  /// are dropped and counted in `cleanup` when given.
  Graph(int num_nodes, std::span<const Edge> edges, Matrix features, std::vector<int> labels,
        int num_classes, Splits splits, EdgeCleanup* cleanup = nullptr);

  int num_nodes() const { return num_nodes_; }
  int num_classes() const { return num_classes_; }
  int feature_dim() const { return static_cast<int>(features_.cols()); }
  /// Undirected edge count.
  std::int64_t num_edges() const { return static_cast<std::int64_t>(col_idx_.size()) / 2; }

  std::span<const int> neighbors(int node) const {
    return {col_idx_.data() + row_ptr_[node], col_idx_.data() + row_ptr_[node + 1]};
  }
  int degree(int node) const { return static_cast<int>(row_ptr_[node + 1] - row_ptr_[node]); }
  bool has_edge(int u, int v) const;

  std::span<const std::int64_t> row_ptr() const { return row_ptr_; }
  std::span<const int> col_idx() const { return col_idx_; }
  /// Canonical undirected edge list, (u, v) with u < v, lexicographic.
  std::vector<Edge> edge_list() const;

  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const Splits& splits() const { return splits_; }

  /// Copy with a different feature matrix (same row count).
  Graph with_features(Matrix features) const;
  /// Copy with extra undirected edges.
  Graph with_added_edges(std::span<const Edge> extra) const;

 private:
  int num_nodes_ = 0;
  int num_classes_ = 0;
  std::vector<std::int64_t> row_ptr_{0};
  std::vector<int> col_idx_;
  Matrix features_;
  std::vector<int> labels_;
  Splits splits_;
};

/// D^{-1/2}(A+I)D^{-1/2} stored as a row-major sparse matrix.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;
  explicit NormalizedAdjacency(SparseMatrix m) : matrix_(std::move(m)) {}

  static NormalizedAdjacency identity(int n);

  const SparseMatrix& matrix() const { return matrix_; }
  int size() const { return static_cast<int>(matrix_.rows()); }
  Matrix multiply(const Matrix& x) const { return matrix_ * x; }
  Matrix to_dense() const { return Matrix(matrix_); }

 private:
  SparseMatrix matrix_;
};

/// Row-stochastic L x L matrix of edge ratios between categories.
struct TransitionMatrix {
  Matrix t;
  double operator()(int from, int to) const { return t(from, to); }
};

Graph load_graph(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                 const std::filesystem::path& label_path, const std::filesystem::path& split_path,
                 int num_classes = 0);

/// Writes the canonical undirected edge list, one "u v" per line.
void write_edges(const Graph& g, const std::filesystem::path& path);

NormalizedAdjacency normalize_adjacency(const Graph& g);

/// Normalization of an arbitrary undirected edge subset of an n-node graph.
NormalizedAdjacency normalize_edges(int num_nodes, std::span<const Edge> edges);

struct InjectionOptions {
  double ratio = 0.1;
  double node_fraction = 0.5;
  std::uint64_t seed = 0;
  /// When false only one endpoint must lie in the selected subset.
  bool both_endpoints_selected = true;
};

/// Adds round(ratio * |E|) cross-category edges among a random node subset.
Graph inject_cross_category_edges(const Graph& g, const InjectionOptions& options);

/// Drops each undirected edge with probability tau (one draw per edge in
/// canonical order) and renormalizes the survivors.
NormalizedAdjacency edge_dropout_sample(const Graph& g, double tau, Rng& stream);

TransitionMatrix compute_transition_matrix(const Graph& g, std::span<const int> labeled_set);

/// Rounds half away from zero.
std::int64_t round_half_away(double x);

}  // namespace cgi
