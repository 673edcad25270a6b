#pragma once

#include "dccl/simgraph.hpp"
#include "dccl/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace dccl {

/// Per-node conception ids, contiguous in [0, K) and canonical: ids are
/// numbered in order of each conception's lowest-indexed node.
class ConceptionAssignment {
 public:
  ConceptionAssignment() = default;

  /// Canonicalizes arbitrary module ids.
  static ConceptionAssignment from_modules(std::span<const Index> modules);

  const std::vector<Index>& labels() const { return labels_; }
  Index operator[](Index node) const { return labels_[static_cast<std::size_t>(node)]; }
  Index num_nodes() const { return static_cast<Index>(labels_.size()); }
  Index num_conceptions() const { return num_conceptions_; }

  /// Member node ids of every conception, ascending.
  std::vector<std::vector<Index>> members() const;

  friend bool operator==(const ConceptionAssignment&, const ConceptionAssignment&) = default;

 private:
  std::vector<Index> labels_;
  Index num_conceptions_ = 0;
};

/// Two-level map equation for undirected flow, in bits.
double codelength(const SimilarityGraph& graph, const ConceptionAssignment& partition);

/// Called with the codelength of every accepted optimizer state.
using CodelengthObserver = std::function<void(double)>;

struct ClusterOptions {
  std::uint64_t seed = 0;
  int max_outer_iterations = 100;
  double tolerance = 1e-12;
  CodelengthObserver observer;
};

/// Greedy map-equation minimization: local node moves, module aggregation,
/// repeated until no sweep improves the codelength. Nodes without edges
/// become singleton conceptions.
ConceptionAssignment cluster(const SimilarityGraph& graph, const ClusterOptions& options);

inline ConceptionAssignment cluster(const SimilarityGraph& graph, std::uint64_t seed) {
  ClusterOptions options;
  options.seed = seed;
  return cluster(graph, options);
}

/// `node,conception` per line.
void write_partition(const std::filesystem::path& path, const ConceptionAssignment& partition);

}  // namespace dccl
