#include "cgi/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>

#include "json.hpp"

#include "cgi/error.hpp"

namespace cgi {

namespace {

void validate_split(const std::vector<int>& idx, const char* name, int n,
                    const std::vector<int>& labels, bool needs_label, std::vector<char>& seen) {
  for (int i : idx) {
    if (i < 0 || i >= n) {
      throw ValidationError(std::string("split '") + name + "' index " + std::to_string(i) +
                            " out of range [0, " + std::to_string(n) + ")");
    }
    if (seen[i]) {
      throw ValidationError(std::string("split '") + name + "' index " + std::to_string(i) +
                            " appears in more than one split");
    }
    seen[i] = 1;
    if (needs_label && labels[i] == kUnlabeled) {
      throw ValidationError(std::string("split '") + name + "' contains unlabeled node " +
                            std::to_string(i));
    }
  }
}

std::uint64_t pair_key(int u, int v) {
  if (u > v) std::swap(u, v);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) << 32) |
         static_cast<std::uint32_t>(v);
}

}  // namespace

Graph::Graph(int num_nodes, std::span<const Edge> edges, Matrix features, std::vector<int> labels,
             int num_classes, Splits splits, EdgeCleanup* cleanup)
    : num_nodes_(num_nodes),
      num_classes_(num_classes),
      features_(std::move(features)),
      labels_(std::move(labels)),
      splits_(std::move(splits)) {
  if (num_nodes < 0) throw ValidationError("negative node count");
  if (num_classes <= 0) throw ValidationError("num_classes must be positive");
  if (features_.rows() != num_nodes) {
    throw ValidationError("feature matrix has " + std::to_string(features_.rows()) +
                          " rows but graph has " + std::to_string(num_nodes) + " nodes");
  }
  if (static_cast<int>(labels_.size()) != num_nodes) {
    throw ValidationError("label vector has " + std::to_string(labels_.size()) +
                          " entries but graph has " + std::to_string(num_nodes) + " nodes");
  }
  for (int i = 0; i < num_nodes; ++i) {
    if (labels_[i] < kUnlabeled || labels_[i] >= num_classes) {
      throw ValidationError("label " + std::to_string(labels_[i]) + " of node " +
                            std::to_string(i) + " outside [-1, " + std::to_string(num_classes) +
                            ")");
    }
  }
  std::vector<char> seen(num_nodes, 0);
  validate_split(splits_.train, "train", num_nodes, labels_, true, seen);
  validate_split(splits_.valid, "valid", num_nodes, labels_, true, seen);
  validate_split(splits_.test, "test", num_nodes, labels_, false, seen);

  EdgeCleanup stats;
  std::vector<Edge> directed;
  directed.reserve(edges.size() * 2);
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes) {
      throw ValidationError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                            ") references a node outside [0, " + std::to_string(num_nodes) + ")");
    }
    if (u == v) {
      ++stats.self_loops;
      continue;
    }
    directed.emplace_back(u, v);
    directed.emplace_back(v, u);
  }
  std::sort(directed.begin(), directed.end());
  const auto before = directed.size();
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());
  stats.duplicates = static_cast<int>((before - directed.size()) / 2);

  row_ptr_.assign(num_nodes + 1, 0);
  col_idx_.resize(directed.size());
  for (std::size_t k = 0; k < directed.size(); ++k) {
    ++row_ptr_[directed[k].first + 1];
    col_idx_[k] = directed[k].second;
  }
  std::partial_sum(row_ptr_.begin(), row_ptr_.end(), row_ptr_.begin());
  if (cleanup) *cleanup = stats;
}

bool Graph::has_edge(int u, int v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

std::vector<Edge> Graph::edge_list() const {
  std::vector<Edge> out;
  out.reserve(col_idx_.size() / 2);
  for (int u = 0; u < num_nodes_; ++u) {
    for (int v : neighbors(u)) {
      if (u < v) out.emplace_back(u, v);
    }
  }
  return out;
}

Graph Graph::with_features(Matrix features) const {
  auto edges = edge_list();
  return Graph(num_nodes_, edges, std::move(features), labels_, num_classes_, splits_);
}

Graph Graph::with_added_edges(std::span<const Edge> extra) const {
  auto edges = edge_list();
  edges.insert(edges.end(), extra.begin(), extra.end());
  return Graph(num_nodes_, edges, features_, labels_, num_classes_, splits_);
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

std::vector<Edge> read_edges(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    std::istringstream ss(line);
    long long u = 0, v = 0;
    std::string rest;
    if (!(ss >> u >> v) || (ss >> rest)) {
      throw ParseError(location(path, lineno) + ": expected two integer node ids");
    }
    if (u < 0 || v < 0 || u > INT32_MAX || v > INT32_MAX) {
      throw ParseError(location(path, lineno) + ": node id out of range");
    }
    edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
  }
  return edges;
}

Matrix read_features(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                            : comma - pos);
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw ParseError(location(path, lineno) + ": bad number '" + cell + "'");
      }
      if (!blank(cell.substr(used))) {
        throw ParseError(location(path, lineno) + ": bad number '" + cell + "'");
      }
      row.push_back(value);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(location(path, lineno) + ": expected " +
                       std::to_string(rows.front().size()) + " columns, got " +
                       std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  const auto cols = rows.empty() ? 0 : rows.front().size();
  Matrix x(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) x(i, j) = rows[i][j];
  }
  return x;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    std::istringstream ss(line);
    long long y = 0;
    std::string rest;
    if (!(ss >> y) || (ss >> rest)) {
      throw ParseError(location(path, lineno) + ": expected one integer label");
    }
    if (y < kUnlabeled || y > INT32_MAX) {
      throw ValidationError(location(path, lineno) + ": label " + std::to_string(y) +
                            " out of range");
    }
    labels.push_back(static_cast<int>(y));
  }
  return labels;
}

Splits read_splits(const std::filesystem::path& path) {
  auto in = open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Splits s;
  auto get = [&](const char* key) {
    if (!j.is_object() || !j.contains(key)) {
      throw ParseError(path.string() + ": missing split '" + key + "'");
    }
    try {
      return j.at(key).get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
      throw ParseError(path.string() + ": split '" + key + "' is not an integer array");
    }
  };
  s.train = get("train");
  s.valid = get("valid");
  s.test = get("test");
  return s;
}

}  // namespace

Graph load_graph(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                 const std::filesystem::path& label_path, const std::filesystem::path& split_path,
                 int num_classes) {
  const auto edges = read_edges(edge_path);
  Matrix features = read_features(feature_path);
  std::vector<int> labels = read_labels(label_path);
  Splits splits = read_splits(split_path);

  const int n = static_cast<int>(features.rows());
  if (static_cast<int>(labels.size()) != n) {
    throw ValidationError(feature_path.string() + " has " + std::to_string(n) + " rows but " +
                          label_path.string() + " has " + std::to_string(labels.size()) +
                          " labels");
  }
  if (num_classes <= 0) {
    const int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    num_classes = std::max(1, max_label + 1);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw ValidationError(location(label_path, i + 1) + ": label " +
                            std::to_string(labels[i]) + " >= num_classes " +
                            std::to_string(num_classes));
    }
  }
  EdgeCleanup cleanup;
  Graph g(n, edges, std::move(features), std::move(labels), num_classes, std::move(splits),
          &cleanup);
  if (cleanup.self_loops > 0 || cleanup.duplicates > 0) {
    std::clog << "warning: " << edge_path.string() << ": dropped " << cleanup.self_loops
              << " self-loop(s) and " << cleanup.duplicates << " duplicate edge(s)\n";
  }
  return g;
}

void write_edges(const Graph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (auto [u, v] : g.edge_list()) out << u << ' ' << v << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Normalization

NormalizedAdjacency NormalizedAdjacency::identity(int n) {
  SparseMatrix m(n, n);
  m.setIdentity();
  m.makeCompressed();
  return NormalizedAdjacency(std::move(m));
}

NormalizedAdjacency normalize_edges(int num_nodes, std::span<const Edge> edges) {
  std::vector<double> degree(num_nodes, 1.0);
  for (auto [u, v] : edges) {
    degree[u] += 1.0;
    degree[v] += 1.0;
  }
  std::vector<double> inv_sqrt(num_nodes);
  for (int i = 0; i < num_nodes; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(edges.size() * 2 + num_nodes);
  for (int i = 0; i < num_nodes; ++i) triplets.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
  for (auto [u, v] : edges) {
    const double w = inv_sqrt[u] * inv_sqrt[v];
    triplets.emplace_back(u, v, w);
    triplets.emplace_back(v, u, w);
  }
  SparseMatrix m(num_nodes, num_nodes);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return NormalizedAdjacency(std::move(m));
}

NormalizedAdjacency normalize_adjacency(const Graph& g) {
  const auto edges = g.edge_list();
  return normalize_edges(g.num_nodes(), edges);
}

NormalizedAdjacency edge_dropout_sample(const Graph& g, double tau, Rng& stream) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("edge dropout tau must lie in [0, 1)");
  const auto edges = g.edge_list();
  std::vector<Edge> kept;
  kept.reserve(edges.size());
  for (const auto& e : edges) {
    if (uniform01(stream) >= tau) kept.push_back(e);
  }
  return normalize_edges(g.num_nodes(), kept);
}

// ---------------------------------------------------------------------------
// Cross-category injection

std::int64_t round_half_away(double x) { return static_cast<std::int64_t>(std::round(x)); }

Graph inject_cross_category_edges(const Graph& g, const InjectionOptions& options) {
  if (!(options.ratio > 0.0 && options.ratio <= 1.0)) {
    throw ValidationError("injection ratio must lie in (0, 1]");
  }
  if (!(options.node_fraction > 0.0 && options.node_fraction <= 1.0)) {
    throw ValidationError("node_fraction must lie in (0, 1]");
  }
  const int n = g.num_nodes();
  const auto& labels = g.labels();
  const std::int64_t required = round_half_away(options.ratio * static_cast<double>(g.num_edges()));

  Rng rng = make_stream(options.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);
  const auto subset_size = static_cast<std::size_t>(
      std::clamp<std::int64_t>(round_half_away(options.node_fraction * n), 0, n));
  std::vector<int> selected(order.begin(), order.begin() + subset_size);
  std::sort(selected.begin(), selected.end());
  std::vector<char> in_subset(n, 0);
  for (int s : selected) {
    if (labels[s] == kUnlabeled) {
      throw ValidationError("cross-category injection needs true labels; node " +
                            std::to_string(s) + " is unlabeled");
    }
    in_subset[s] = 1;
  }
  // Partner pool: the subset itself, or every labeled node.
  std::vector<int> partners;
  if (options.both_endpoints_selected) {
    partners = selected;
  } else {
    for (int v = 0; v < n; ++v) {
      if (labels[v] != kUnlabeled) partners.push_back(v);
    }
  }

  auto legal = [&](int u, int v) {
    return u != v && labels[u] != labels[v] && !g.has_edge(u, v);
  };
  // Each unordered pair is visited once: u from the subset, v from the
  // partner pool, and when both are in the subset only u < v.
  auto for_each_candidate = [&](auto&& fn) {
    for (int u : selected) {
      for (int v : partners) {
        if (in_subset[v] && v <= u) continue;
        if (legal(u, v)) fn(u, v);
      }
    }
  };
  std::int64_t available = 0;
  for_each_candidate([&](int, int) { ++available; });
  if (available < required) {
    throw GenerationError("cross-category injection needs " + std::to_string(required) +
                          " edges but only " + std::to_string(available) +
                          " legal pairs exist (shortfall " + std::to_string(required - available) +
                          ")");
  }

  std::vector<Edge> added;
  added.reserve(static_cast<std::size_t>(required));
  if (available >= 2 * required) {
    // At least half of the legal pairs stay free throughout, so rejection
    // sampling terminates quickly.
    std::unordered_set<std::uint64_t> taken;
    while (static_cast<std::int64_t>(added.size()) < required) {
      const int u = selected[uniform_index(rng, selected.size())];
      const int v = partners[uniform_index(rng, partners.size())];
      if (!legal(u, v)) continue;
      if (!taken.insert(pair_key(u, v)).second) continue;
      added.emplace_back(std::min(u, v), std::max(u, v));
    }
  } else {
    std::vector<Edge> pool;
    pool.reserve(static_cast<std::size_t>(available));
    for_each_candidate([&](int u, int v) { pool.emplace_back(std::min(u, v), std::max(u, v)); });
    for (std::int64_t i = 0; i < required; ++i) {
      const auto j = i + static_cast<std::int64_t>(
                             uniform_index(rng, static_cast<std::uint64_t>(available - i)));
      std::swap(pool[i], pool[j]);
      added.push_back(pool[i]);
    }
  }
  return g.with_added_edges(added);
}

// ---------------------------------------------------------------------------
// Category transition

TransitionMatrix compute_transition_matrix(const Graph& g, std::span<const int> labeled_set) {
  const int n = g.num_nodes();
  const int num_classes = g.num_classes();
  std::vector<char> member(n, 0);
  for (int i : labeled_set) {
    if (i < 0 || i >= n) throw ValidationError("labeled set index out of range");
    if (g.labels()[i] == kUnlabeled) {
      throw ValidationError("labeled set contains unlabeled node " + std::to_string(i));
    }
    member[i] = 1;
  }
  Matrix counts = Matrix::Zero(num_classes, num_classes);
  for (auto [u, v] : g.edge_list()) {
    if (!member[u] || !member[v]) continue;
    const int a = g.labels()[u];
    const int b = g.labels()[v];
    counts(a, b) += 1.0;
    if (a != b) counts(b, a) += 1.0;
  }
  for (int r = 0; r < num_classes; ++r) {
    const double total = counts.row(r).sum();
    if (total > 0.0) {
      counts.row(r) /= total;
    } else {
      counts.row(r).setConstant(1.0 / num_classes);
    }
  }
  return TransitionMatrix{std::move(counts)};
}

}  // namespace cgi
