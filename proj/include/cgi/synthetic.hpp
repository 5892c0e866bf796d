#pragma once

#include <cstdint>

#include "cgi/graph.hpp"

namespace cgi {

/// Planted-partition graph with Gaussian class-centroid features and a
/// planetoid-style split (a fixed number of training nodes per class).
struct PlantedPartitionConfig {
  int nodes = 1500;
  int classes = 6;
  int feature_dim = 16;
  double avg_degree = 2.0;
  /// Probability that an edge joins two nodes of the same class.
  double homophily = 0.9;
  /// Centroid norm scale relative to unit feature noise.
  double feature_signal = 0.7;
  int train_per_class = 20;
  int valid = 580;
  int test = 800;
  std::uint64_t seed = 0;
};

Graph make_planted_partition(const PlantedPartitionConfig& config);

}  // namespace cgi
