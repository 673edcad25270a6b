#pragma once

#include "dccl/dataset.hpp"
#include "dccl/types.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace dccl {

struct Edge {
  Index i = 0;
  Index j = 0;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected weighted graph stored with both directions of every edge,
/// sorted by (i, j). Weights lie in [0, 1]; no self-loops.
struct SimilarityGraph {
  Index num_nodes = 0;
  std::vector<Edge> edges;

  /// Number of undirected edges.
  std::size_t num_undirected() const { return edges.size() / 2; }

  /// Throws Error if any structural invariant is broken.
  void validate() const;
};

struct GraphConfig {
  double tau_f = 0.6;
  Index knn_k = 20;
  unsigned threads = 1;
};

/// Similarity mapped to [0, 1]: ((v_i/|v_i|)·(v_j/|v_j|) + 1) / 2.
double cosine_similarity(const Eigen::Ref<const VectorXd>& vi, const Eigen::Ref<const VectorXd>& vj);

/// Largest similarity between row i and any other row (self excluded).
double max_neighbor_similarity(Index i, const MatrixXd& features);

/// Consolidated similarity network over all rows of `features`.
///   same-class labeled pair        -> weight s_i^max (always linked)
///   pair with an unlabeled member  -> weight s_ij when s_ij > tau_f and the
///                                     pair is within either node's knn_k
///   cross-class labeled pair       -> never linked
/// Directed weights are symmetrized with max().
SimilarityGraph build_consolidated_graph(std::span<const Label> labels, const MatrixXd& features,
                                         const GraphConfig& cfg);

inline SimilarityGraph build_consolidated_graph(const GcdDataset& dataset,
                                                const MatrixXd& features,
                                                const GraphConfig& cfg) {
  return build_consolidated_graph(std::span<const Label>(dataset.labels), features, cfg);
}

/// Debug dump: `i j w` per directed edge, 9 significant digits.
void write_edge_list(const std::filesystem::path& path, const SimilarityGraph& graph);

}  // namespace dccl
