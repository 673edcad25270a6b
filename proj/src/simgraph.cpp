#include "dccl/simgraph.hpp"

#include "dccl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>

namespace dccl {

namespace {

MatrixXd normalized_rows(const MatrixXd& features) {
  MatrixXd out = features;
  for (Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (!(n > 0.0)) throw InvalidArgument("zero feature vector at row " + std::to_string(r));
    out.row(r) /= n;
  }
  return out;
}

double to_unit_interval(double dot) { return std::clamp((dot + 1.0) / 2.0, 0.0, 1.0); }

}  // namespace

void SimilarityGraph::validate() const {
  std::map<std::pair<Index, Index>, double> seen;
  for (const auto& e : edges) {
    if (e.i == e.j) throw Error("self-loop at node " + std::to_string(e.i));
    if (e.i < 0 || e.j < 0 || e.i >= num_nodes || e.j >= num_nodes) throw Error("edge out of range");
    if (!(e.weight >= 0.0 && e.weight <= 1.0)) throw Error("edge weight outside [0,1]");
    if (!seen.emplace(std::pair{e.i, e.j}, e.weight).second) throw Error("duplicate edge");
  }
  for (const auto& [key, w] : seen) {
    auto it = seen.find({key.second, key.first});
    if (it == seen.end() || it->second != w) throw Error("graph is not symmetric");
  }
}

double cosine_similarity(const Eigen::Ref<const VectorXd>& vi, const Eigen::Ref<const VectorXd>& vj) {
  if (vi.size() != vj.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  const double ni = vi.norm();
  const double nj = vj.norm();
  if (!(ni > 0.0) || !(nj > 0.0)) throw InvalidArgument("cosine_similarity: zero vector");
  return to_unit_interval(vi.dot(vj) / (ni * nj));
}

double max_neighbor_similarity(Index i, const MatrixXd& features) {
  if (features.rows() < 2) throw InvalidArgument("max_neighbor_similarity: need >= 2 instances");
  if (i < 0 || i >= features.rows()) throw InvalidArgument("max_neighbor_similarity: bad index");
  double best = 0.0;
  for (Index j = 0; j < features.rows(); ++j) {
    if (j == i) continue;
    best = std::max(best, cosine_similarity(features.row(i).transpose(), features.row(j).transpose()));
  }
  return best;
}

SimilarityGraph build_consolidated_graph(std::span<const Label> labels, const MatrixXd& features,
                                         const GraphConfig& cfg) {
  const Index m = features.rows();
  if (static_cast<Index>(labels.size()) != m) {
    throw ShapeError("build_consolidated_graph: labels and features are misaligned");
  }
  if (!(cfg.tau_f >= 0.0 && cfg.tau_f <= 1.0)) throw InvalidArgument("tau_f must lie in [0,1]");
  if (cfg.knn_k < 1) throw InvalidArgument("knn_k must be >= 1");
  if (m < 2) throw InvalidArgument("build_consolidated_graph: need >= 2 instances");

  const MatrixXd unit = normalized_rows(features);
  const Index k = std::min(cfg.knn_k, m - 1);

  struct RowResult {
    double s_max = 0.0;
    std::vector<std::pair<Index, double>> knn;  // (j, s_ij)
  };
  std::vector<RowResult> rows(static_cast<std::size_t>(m));

  parallel_for(static_cast<std::size_t>(m), cfg.threads, [&](std::size_t ui) {
    const auto i = static_cast<Index>(ui);
    const VectorXd sim = (unit * unit.row(i).transpose()).unaryExpr(&to_unit_interval);
    std::vector<Index> order;
    order.reserve(static_cast<std::size_t>(m - 1));
    for (Index j = 0; j < m; ++j) {
      if (j != i) order.push_back(j);
    }
    auto closer = [&](Index a, Index b) { return sim(a) > sim(b) || (sim(a) == sim(b) && a < b); };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
    auto& row = rows[ui];
    row.s_max = sim(order.front());
    row.knn.reserve(static_cast<std::size_t>(k));
    for (Index n = 0; n < k; ++n) row.knn.emplace_back(order[static_cast<std::size_t>(n)], sim(order[static_cast<std::size_t>(n)]));
  });

  // Undirected weights keyed by (min, max); max() merges the two directions.
  std::map<std::pair<Index, Index>, double> weights;
  auto put = [&](Index a, Index b, double w) {
    auto key = std::minmax(a, b);
    auto [it, inserted] = weights.emplace(std::pair{key.first, key.second}, w);
    if (!inserted) it->second = std::max(it->second, w);
  };

  // Same-class labeled pairs: consolidated links.
  std::map<ClassId, std::vector<Index>> by_class;
  for (Index i = 0; i < m; ++i) {
    if (labels[static_cast<std::size_t>(i)]) by_class[*labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  for (const auto& [c, members] : by_class) {
    for (Index a : members) {
      for (Index b : members) {
        if (a != b) put(a, b, rows[static_cast<std::size_t>(a)].s_max);
      }
    }
  }

  // Thresholded kNN links involving at least one unlabeled node. A pair that
  // is both labeled never takes this branch: same-class pairs are already
  // consolidated, cross-class pairs stay disconnected.
  for (Index i = 0; i < m; ++i) {
    const bool li = labels[static_cast<std::size_t>(i)].has_value();
    for (const auto& [j, s] : rows[static_cast<std::size_t>(i)].knn) {
      if (li && labels[static_cast<std::size_t>(j)].has_value()) continue;
      if (s > cfg.tau_f) put(i, j, s);
    }
  }

  SimilarityGraph graph;
  graph.num_nodes = m;
  graph.edges.reserve(weights.size() * 2);
  for (const auto& [key, w] : weights) {
    graph.edges.push_back({key.first, key.second, w});
    graph.edges.push_back({key.second, key.first, w});
  }
  std::sort(graph.edges.begin(), graph.edges.end(),
            [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
  return graph;
}

void write_edge_list(const std::filesystem::path& path, const SimilarityGraph& graph) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(9);
  for (const auto& e : graph.edges) out << e.i << ' ' << e.j << ' ' << e.weight << '\n';
}

}  // namespace dccl
