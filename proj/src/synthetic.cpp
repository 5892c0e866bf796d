#include "cgi/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_set>

#include "cgi/error.hpp"

namespace cgi {

Graph make_planted_partition(const PlantedPartitionConfig& config) {
  const int n = config.nodes;
  const int l = config.classes;
  if (n < 2 || l < 2) throw ValidationError("planted partition needs >= 2 nodes and classes");
  if (!(config.homophily >= 0.0 && config.homophily <= 1.0)) {
    throw ValidationError("homophily must lie in [0, 1]");
  }
  if (l * config.train_per_class + config.valid + config.test > n) {
    throw ValidationError("split sizes exceed the node count");
  }
  Rng rng = make_stream(config.seed, 0);

  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % l;
  shuffle(labels.begin(), labels.end(), rng);
  std::vector<std::vector<int>> members(l);
  for (int i = 0; i < n; ++i) members[labels[i]].push_back(i);

  const auto target = static_cast<std::size_t>(round_half_away(config.avg_degree * n / 2.0));
  std::unordered_set<std::uint64_t> seen;
  std::vector<Edge> edges;
  edges.reserve(target);
  while (edges.size() < target) {
    const int u = static_cast<int>(uniform_index(rng, n));
    int cls = labels[u];
    if (uniform01(rng) >= config.homophily) {
      cls = (cls + 1 + static_cast<int>(uniform_index(rng, l - 1))) % l;
    }
    const auto& pool = members[cls];
    const int v = pool[uniform_index(rng, pool.size())];
    if (u == v) continue;
    const auto key = (static_cast<std::uint64_t>(std::min(u, v)) << 32) |
                     static_cast<std::uint32_t>(std::max(u, v));
    if (!seen.insert(key).second) continue;
    edges.emplace_back(std::min(u, v), std::max(u, v));
  }

  Rng feature_rng = make_stream(config.seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centroids(l, config.feature_dim);
  for (Eigen::Index i = 0; i < centroids.size(); ++i) {
    centroids.data()[i] = config.feature_signal * normal(feature_rng);
  }
  Matrix features(n, config.feature_dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < config.feature_dim; ++d) {
      features(i, d) = centroids(labels[i], d) + normal(feature_rng);
    }
  }

  Rng split_rng = make_stream(config.seed, 2);
  Splits splits;
  std::vector<int> rest;
  for (int c = 0; c < l; ++c) {
    auto pool = members[c];
    shuffle(pool.begin(), pool.end(), split_rng);
    const auto take = std::min<std::size_t>(config.train_per_class, pool.size());
    splits.train.insert(splits.train.end(), pool.begin(), pool.begin() + take);
    rest.insert(rest.end(), pool.begin() + take, pool.end());
  }
  std::sort(rest.begin(), rest.end());
  shuffle(rest.begin(), rest.end(), split_rng);
  splits.valid.assign(rest.begin(), rest.begin() + config.valid);
  splits.test.assign(rest.begin() + config.valid, rest.begin() + config.valid + config.test);
  std::sort(splits.train.begin(), splits.train.end());
  std::sort(splits.valid.begin(), splits.valid.end());
  std::sort(splits.test.begin(), splits.test.end());

  return Graph(n, edges, std::move(features), std::move(labels), l, std::move(splits));
}

}  // namespace cgi
