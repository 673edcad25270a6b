#include "dccl/infomap.hpp"

#include "dccl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace dccl {

namespace {

double plogp(double p) { return p > 0.0 ? p * std::log2(p) : 0.0; }

struct Neighbor {
  Index node;
  double flow;  // per-direction flow w / 2W
};

/// One level of the coarsening hierarchy: nodes carry their visit rate and
/// exit flow; adjacency holds flows to other nodes (no self-loops).
struct Level {
  std::vector<double> flow;
  std::vector<double> exit;
  std::vector<std::vector<Neighbor>> adj;

  Index size() const { return static_cast<Index>(flow.size()); }
};

struct FlowModel {
  Level leaf;
  double node_entropy = 0.0;  // sum of plogp over leaf visit rates
};

FlowModel make_flow(const SimilarityGraph& graph) {
  const auto n = static_cast<std::size_t>(graph.num_nodes);
  double total = 0.0;  // 2W: every undirected edge appears twice
  for (const auto& e : graph.edges) total += e.weight;
  if (!(total > 0.0)) throw InvalidArgument("map equation needs at least one weighted edge");

  FlowModel model;
  model.leaf.flow.assign(n, 0.0);
  model.leaf.exit.assign(n, 0.0);
  model.leaf.adj.resize(n);
  for (const auto& e : graph.edges) {
    const double f = e.weight / total;
    const auto i = static_cast<std::size_t>(e.i);
    model.leaf.flow[i] += f;
    model.leaf.exit[i] += f;
    model.leaf.adj[i].push_back({e.j, f});
  }
  for (double p : model.leaf.flow) model.node_entropy += plogp(p);
  return model;
}

/// Module totals for a partition of one level, with the codelength terms
/// kept as running sums so node moves are O(1) to score.
class ModuleState {
 public:
  ModuleState(const Level& level, std::vector<Index> module_of, double node_entropy)
      : level_(level), module_of_(std::move(module_of)), node_entropy_(node_entropy) {
    recompute();
  }

  void recompute() {
    const auto n = static_cast<std::size_t>(level_.size());
    mod_flow_.assign(n, 0.0);
    mod_exit_.assign(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      const auto m = static_cast<std::size_t>(module_of_[v]);
      mod_flow_[m] += level_.flow[v];
      mod_exit_[m] += level_.exit[v];
      for (const auto& nb : level_.adj[v]) {
        if (module_of_[static_cast<std::size_t>(nb.node)] == module_of_[v]) mod_exit_[m] -= nb.flow;
      }
    }
    sum_exit_ = 0.0;
    sum_plogp_exit_ = 0.0;
    sum_plogp_total_ = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      if (mod_exit_[m] < 0.0) mod_exit_[m] = 0.0;
      sum_exit_ += mod_exit_[m];
      sum_plogp_exit_ += plogp(mod_exit_[m]);
      sum_plogp_total_ += plogp(mod_exit_[m] + mod_flow_[m]);
    }
  }

  double codelength() const {
    return plogp(sum_exit_) - 2.0 * sum_plogp_exit_ - node_entropy_ + sum_plogp_total_;
  }

  /// Codelength change if `node` (currently in its module) joins `target`.
  /// flow_old / flow_new: flow between node and the other members of the
  /// source / target module.
  double delta(Index node, Index target, double flow_old, double flow_new) const {
    const auto v = static_cast<std::size_t>(node);
    const auto a = static_cast<std::size_t>(module_of_[v]);
    const auto b = static_cast<std::size_t>(target);
    const double p = level_.flow[v];
    const double q = level_.exit[v];

    const double exit_a = mod_exit_[a] - q + 2.0 * flow_old;
    const double exit_b = mod_exit_[b] + q - 2.0 * flow_new;
    const double flow_a = mod_flow_[a] - p;
    const double flow_b = mod_flow_[b] + p;
    const double sum_exit = sum_exit_ - mod_exit_[a] - mod_exit_[b] + exit_a + exit_b;

    const double d_exit = plogp(exit_a) + plogp(exit_b) - plogp(mod_exit_[a]) - plogp(mod_exit_[b]);
    const double d_total = plogp(exit_a + flow_a) + plogp(exit_b + flow_b) -
                           plogp(mod_exit_[a] + mod_flow_[a]) - plogp(mod_exit_[b] + mod_flow_[b]);
    return plogp(sum_exit) - plogp(sum_exit_) - 2.0 * d_exit + d_total;
  }

  void move(Index node, Index target, double flow_old, double flow_new) {
    const auto v = static_cast<std::size_t>(node);
    const auto a = static_cast<std::size_t>(module_of_[v]);
    const auto b = static_cast<std::size_t>(target);
    const double p = level_.flow[v];
    const double q = level_.exit[v];

    auto retire = [&](std::size_t m) {
      sum_exit_ -= mod_exit_[m];
      sum_plogp_exit_ -= plogp(mod_exit_[m]);
      sum_plogp_total_ -= plogp(mod_exit_[m] + mod_flow_[m]);
    };
    auto admit = [&](std::size_t m) {
      sum_exit_ += mod_exit_[m];
      sum_plogp_exit_ += plogp(mod_exit_[m]);
      sum_plogp_total_ += plogp(mod_exit_[m] + mod_flow_[m]);
    };
    retire(a);
    retire(b);
    mod_exit_[a] = std::max(0.0, mod_exit_[a] - q + 2.0 * flow_old);
    mod_exit_[b] = std::max(0.0, mod_exit_[b] + q - 2.0 * flow_new);
    mod_flow_[a] -= p;
    mod_flow_[b] += p;
    if (mod_flow_[a] <= 0.0) {
      mod_flow_[a] = 0.0;
      mod_exit_[a] = 0.0;
    }
    admit(a);
    admit(b);
    module_of_[v] = target;
  }

  Index module_of(Index node) const { return module_of_[static_cast<std::size_t>(node)]; }
  const std::vector<Index>& modules() const { return module_of_; }

 private:
  const Level& level_;
  std::vector<Index> module_of_;
  double node_entropy_;
  std::vector<double> mod_flow_;
  std::vector<double> mod_exit_;
  double sum_exit_ = 0.0;
  double sum_plogp_exit_ = 0.0;
  double sum_plogp_total_ = 0.0;
};

/// Local moving on one level until a full sweep gains no more than `tolerance`.
/// Returns the final module id of each level node.
std::vector<Index> local_moves(const Level& level, double node_entropy, std::span<const Index> order,
                               const ClusterOptions& options) {
  std::vector<Index> init(static_cast<std::size_t>(level.size()));
  std::iota(init.begin(), init.end(), Index{0});
  ModuleState state(level, std::move(init), node_entropy);

  std::unordered_map<Index, double> link;  // module -> flow from current node
  std::vector<Index> candidates;
  for (int sweep = 0; sweep < 1000; ++sweep) {
    const double before = state.codelength();
    for (Index v : order) {
      const auto& adj = level.adj[static_cast<std::size_t>(v)];
      if (adj.empty()) continue;
      const Index own = state.module_of(v);
      link.clear();
      candidates.clear();
      for (const auto& nb : adj) {
        const Index m = state.module_of(nb.node);
        auto [it, inserted] = link.emplace(m, 0.0);
        if (inserted && m != own) candidates.push_back(m);
        it->second += nb.flow;
      }
      std::sort(candidates.begin(), candidates.end());
      const double flow_old = link.contains(own) ? link[own] : 0.0;

      Index best = own;
      double best_delta = 0.0;
      for (Index m : candidates) {
        const double d = state.delta(v, m, flow_old, link[m]);
        if (d < best_delta) {
          best_delta = d;
          best = m;
        }
      }
      // Ignore moves whose gain is pure rounding noise.
      if (best != own && best_delta < -1e-15) {
        state.move(v, best, flow_old, link[best]);
        if (options.observer) options.observer(state.codelength());
      }
    }
    state.recompute();
    if (before - state.codelength() <= options.tolerance) break;
  }
  return state.modules();
}

Level aggregate(const Level& level, std::span<const Index> dense_module, Index num_modules) {
  Level out;
  const auto k = static_cast<std::size_t>(num_modules);
  out.flow.assign(k, 0.0);
  out.exit.assign(k, 0.0);
  out.adj.resize(k);
  std::vector<std::unordered_map<Index, double>> links(k);
  for (std::size_t v = 0; v < level.flow.size(); ++v) {
    const auto m = static_cast<std::size_t>(dense_module[v]);
    out.flow[m] += level.flow[v];
    for (const auto& nb : level.adj[v]) {
      const Index t = dense_module[static_cast<std::size_t>(nb.node)];
      if (static_cast<std::size_t>(t) == m) continue;
      links[m][t] += nb.flow;
      out.exit[m] += nb.flow;
    }
  }
  for (std::size_t m = 0; m < k; ++m) {
    for (const auto& [t, f] : links[m]) out.adj[m].push_back({t, f});
    std::sort(out.adj[m].begin(), out.adj[m].end(),
              [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; });
  }
  return out;
}

/// Renumbers module ids densely by first appearance.
Index densify(std::vector<Index>& modules) {
  std::unordered_map<Index, Index> remap;
  for (auto& m : modules) {
    auto [it, _] = remap.emplace(m, static_cast<Index>(remap.size()));
    m = it->second;
  }
  return static_cast<Index>(remap.size());
}

std::vector<Index> connected_components(const Level& leaf) {
  const auto n = leaf.flow.size();
  std::vector<Index> comp(n, -1);
  Index next = 0;
  std::vector<Index> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    comp[s] = next;
    stack.assign(1, static_cast<Index>(s));
    while (!stack.empty()) {
      const auto v = static_cast<std::size_t>(stack.back());
      stack.pop_back();
      for (const auto& nb : leaf.adj[v]) {
        auto& c = comp[static_cast<std::size_t>(nb.node)];
        if (c < 0) {
          c = next;
          stack.push_back(nb.node);
        }
      }
    }
    ++next;
  }
  return comp;
}

double codelength_of(const Level& leaf, double node_entropy, std::vector<Index> modules) {
  densify(modules);
  return ModuleState(leaf, std::move(modules), node_entropy).codelength();
}

}  // namespace

ConceptionAssignment ConceptionAssignment::from_modules(std::span<const Index> modules) {
  ConceptionAssignment out;
  out.labels_.assign(modules.begin(), modules.end());
  out.num_conceptions_ = densify(out.labels_);
  return out;
}

std::vector<std::vector<Index>> ConceptionAssignment::members() const {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(num_conceptions_));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    out[static_cast<std::size_t>(labels_[i])].push_back(static_cast<Index>(i));
  }
  return out;
}

double codelength(const SimilarityGraph& graph, const ConceptionAssignment& partition) {
  if (partition.num_nodes() != graph.num_nodes) {
    throw ShapeError("codelength: partition does not cover the graph");
  }
  const FlowModel model = make_flow(graph);
  return codelength_of(model.leaf, model.node_entropy, partition.labels());
}

ConceptionAssignment cluster(const SimilarityGraph& graph, const ClusterOptions& options) {
  const auto n = static_cast<std::size_t>(graph.num_nodes);
  if (n == 0) throw InvalidArgument("cluster: empty graph");

  std::vector<Index> identity(n);
  std::iota(identity.begin(), identity.end(), Index{0});
  if (graph.edges.empty()) return ConceptionAssignment::from_modules(identity);

  const FlowModel model = make_flow(graph);
  Rng rng(options.seed);

  std::vector<Index> leaf_module = identity;  // leaf node -> current top-level node
  Level level = model.leaf;
  if (options.observer) options.observer(codelength_of(model.leaf, model.node_entropy, leaf_module));

  for (int outer = 0; outer < options.max_outer_iterations; ++outer) {
    std::vector<Index> order(static_cast<std::size_t>(level.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    // Observer values from a coarse level are exact: aggregated-node moves
    // score the same codelength as the corresponding leaf partition.
    std::vector<Index> modules = local_moves(level, model.node_entropy, order, options);
    const Index num_modules = densify(modules);
    if (num_modules == level.size()) break;
    for (auto& m : leaf_module) m = modules[static_cast<std::size_t>(m)];
    level = aggregate(level, modules, num_modules);
  }

  // Greedy merging cannot always reach coarse optima such as one module per
  // connected component; keep whichever candidate codes shortest.
  double best = codelength_of(model.leaf, model.node_entropy, leaf_module);
  for (auto candidate : {connected_components(model.leaf), std::vector<Index>(n, 0), identity}) {
    const double l = codelength_of(model.leaf, model.node_entropy, candidate);
    if (l < best - 1e-15) {
      best = l;
      leaf_module = std::move(candidate);
      if (options.observer) options.observer(best);
    }
  }

  // Edgeless nodes carry no flow; give each its own conception.
  for (std::size_t v = 0; v < n; ++v) {
    if (model.leaf.adj[v].empty()) leaf_module[v] = static_cast<Index>(n + v);
  }
  return ConceptionAssignment::from_modules(leaf_module);
}

void write_partition(const std::filesystem::path& path, const ConceptionAssignment& partition) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (Index i = 0; i < partition.num_nodes(); ++i) out << i << ',' << partition[i] << '\n';
}

}  // namespace dccl
