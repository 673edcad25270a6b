#include "dccl/eval.hpp"

#include "dccl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace dccl {

namespace {

void normalize(Eigen::Ref<RowVector<double>> row) {
  const double n = row.norm();
  if (n > 0.0) row /= n;
}

Index nearest(const MatrixXd& centroids, const Eigen::Ref<const RowVector<double>>& x, double* dist) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double d = (x - centroids.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

MatrixXd ss_kmeans_init(const MatrixXd& features, std::span<const Label> labels, Index k,
                        std::uint64_t seed, std::vector<ClassId>* labeled_classes) {
  const Index m = features.rows();
  if (static_cast<Index>(labels.size()) != m) throw ShapeError("ss_kmeans: labels misaligned");
  std::set<ClassId> classes;
  for (const auto& l : labels) {
    if (l) classes.insert(*l);
  }
  const auto num_labeled = static_cast<Index>(classes.size());
  if (k < num_labeled) throw InvalidArgument("ss_kmeans: k is smaller than the number of labeled classes");
  if (k < 1) throw InvalidArgument("ss_kmeans: k must be >= 1");

  std::vector<ClassId> order(classes.begin(), classes.end());
  std::map<ClassId, Index> slot;
  for (Index c = 0; c < num_labeled; ++c) slot[order[static_cast<std::size_t>(c)]] = c;

  MatrixXd centroids = MatrixXd::Zero(k, features.cols());
  std::vector<Index> counts(static_cast<std::size_t>(num_labeled), 0);
  std::vector<Index> unlabeled;
  for (Index i = 0; i < m; ++i) {
    if (labels[static_cast<std::size_t>(i)]) {
      const Index c = slot[*labels[static_cast<std::size_t>(i)]];
      centroids.row(c) += features.row(i);
      ++counts[static_cast<std::size_t>(c)];
    } else {
      unlabeled.push_back(i);
    }
  }
  for (Index c = 0; c < num_labeled; ++c) {
    centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    normalize(centroids.row(c));
  }

  const Index extra = k - num_labeled;
  if (extra > static_cast<Index>(unlabeled.size())) {
    throw InvalidArgument("ss_kmeans: not enough unlabeled points to seed k clusters");
  }
  Rng rng(seed);
  Index filled = num_labeled;
  if (extra > 0 && filled == 0) {
    std::uniform_int_distribution<std::size_t> pick(0, unlabeled.size() - 1);
    centroids.row(0) = features.row(unlabeled[pick(rng)]);
    filled = 1;
  }
  std::vector<double> d2(unlabeled.size(), std::numeric_limits<double>::infinity());
  Index scanned = 0;  // centroids already folded into d2
  while (filled < k) {
    for (std::size_t u = 0; u < unlabeled.size(); ++u) {
      for (Index c = scanned; c < filled; ++c) {
        d2[u] = std::min(d2[u], (features.row(unlabeled[u]) - centroids.row(c)).squaredNorm());
      }
    }
    scanned = filled;
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u01(0.0, total);
      double target = u01(rng);
      for (chosen = 0; chosen + 1 < d2.size(); ++chosen) {
        if (target < d2[chosen]) break;
        target -= d2[chosen];
      }
      while (d2[chosen] == 0.0 && chosen > 0) --chosen;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, unlabeled.size() - 1);
      chosen = pick(rng);
    }
    centroids.row(filled++) = features.row(unlabeled[chosen]);
  }
  if (labeled_classes) *labeled_classes = std::move(order);
  return centroids;
}

KMeansResult ss_kmeans(const MatrixXd& features, std::span<const Label> labels, Index k,
                       std::uint64_t seed, int max_iter, const KMeansObserver& observer) {
  if (max_iter < 1) throw InvalidArgument("ss_kmeans: max_iter must be >= 1");
  std::vector<ClassId> classes;
  KMeansResult out;
  out.centroids = ss_kmeans_init(features, labels, k, seed, &classes);
  std::map<ClassId, Index> slot;
  for (std::size_t c = 0; c < classes.size(); ++c) slot[classes[c]] = static_cast<Index>(c);

  const Index m = features.rows();
  std::vector<Index> assign(static_cast<std::size_t>(m), -1);
  std::vector<double> dist(static_cast<std::size_t>(m), 0.0);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<Index> next(static_cast<std::size_t>(m));
    double objective = 0.0;
    for (Index i = 0; i < m; ++i) {
      const auto& l = labels[static_cast<std::size_t>(i)];
      double d = 0.0;
      if (l) {
        next[static_cast<std::size_t>(i)] = slot[*l];
        d = (features.row(i) - out.centroids.row(slot[*l])).squaredNorm();
      } else {
        next[static_cast<std::size_t>(i)] = nearest(out.centroids, features.row(i), &d);
      }
      dist[static_cast<std::size_t>(i)] = d;
      objective += d;
    }
    out.objective.push_back(objective);
    out.iterations = iter + 1;
    const bool fixpoint = next == assign;
    assign = std::move(next);
    if (observer) observer(iter, assign);
    if (fixpoint) break;

    MatrixXd sums = MatrixXd::Zero(k, features.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < m; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += features.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    std::vector<bool> taken(static_cast<std::size_t>(m), false);
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        out.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        normalize(out.centroids.row(c));
        continue;
      }
      // Empty cluster: move it onto the unlabeled row worst served so far.
      Index far = -1;
      for (Index i = 0; i < m; ++i) {
        if (labels[static_cast<std::size_t>(i)] || taken[static_cast<std::size_t>(i)]) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) continue;
      taken[static_cast<std::size_t>(far)] = true;
      out.centroids.row(c) = features.row(far);
    }
  }
  out.assignment = std::move(assign);
  return out;
}

std::vector<Index> solve_assignment(const MatrixXd& cost) {
  const Index rows = cost.rows();
  const Index cols = cost.cols();
  const Index n = std::max(rows, cols);
  if (n == 0) return {};
  MatrixXd a = MatrixXd::Zero(n, n);
  a.topLeftCorner(rows, cols) = cost;

  // Shortest augmenting path with potentials (1-based internally).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> match(static_cast<std::size_t>(rows), -1);
  for (Index j = 1; j <= n; ++j) {
    const Index i = p[static_cast<std::size_t>(j)];
    if (i >= 1 && i <= rows && j <= cols) match[static_cast<std::size_t>(i - 1)] = j - 1;
  }
  return match;
}

Metrics hungarian_accuracy(std::span<const Index> predicted, std::span<const ClassId> truth,
                           const std::set<ClassId>& old_classes) {
  if (predicted.size() != truth.size()) throw ShapeError("hungarian_accuracy: length mismatch");
  if (predicted.empty()) throw InvalidArgument("hungarian_accuracy: nothing to evaluate");

  std::map<Index, Index> cluster_slot;
  std::map<ClassId, Index> class_slot;
  for (Index c : predicted) cluster_slot.emplace(c, 0);
  for (ClassId c : truth) class_slot.emplace(c, 0);
  std::vector<Index> cluster_ids, class_ids;
  for (auto& [c, s] : cluster_slot) {
    s = static_cast<Index>(cluster_ids.size());
    cluster_ids.push_back(c);
  }
  for (auto& [c, s] : class_slot) {
    s = static_cast<Index>(class_ids.size());
    class_ids.push_back(c);
  }

  MatrixXd counts = MatrixXd::Zero(static_cast<Index>(cluster_ids.size()), static_cast<Index>(class_ids.size()));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    counts(cluster_slot[predicted[i]], class_slot[truth[i]]) += 1.0;
  }
  const MatrixXd cost = counts.maxCoeff() - counts.array();
  const auto match = solve_assignment(cost);

  Metrics out;
  out.k_used = static_cast<Index>(cluster_ids.size());
  for (std::size_t r = 0; r < match.size(); ++r) {
    if (match[r] >= 0) {
      out.matching[cluster_ids[r]] = static_cast<ClassId>(class_ids[static_cast<std::size_t>(match[r])]);
    }
  }
  Index hit_all = 0, hit_old = 0, hit_new = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    auto it = out.matching.find(predicted[i]);
    const bool hit = it != out.matching.end() && it->second == truth[i];
    const bool old = old_classes.contains(truth[i]);
    (old ? out.num_old : out.num_new) += 1;
    if (!hit) continue;
    ++hit_all;
    (old ? hit_old : hit_new) += 1;
  }
  out.acc_all = static_cast<double>(hit_all) / static_cast<double>(predicted.size());
  out.acc_old = out.num_old ? static_cast<double>(hit_old) / static_cast<double>(out.num_old) : 0.0;
  out.acc_new = out.num_new ? static_cast<double>(hit_new) / static_cast<double>(out.num_new) : 0.0;
  return out;
}

KMeansResult ss_kmeans_restarts(const MatrixXd& features, std::span<const Label> labels, Index k,
                                std::uint64_t seed, int n_init, int max_iter) {
  if (n_init < 1) throw InvalidArgument("ss_kmeans: n_init must be >= 1");
  std::optional<KMeansResult> best;
  for (int r = 0; r < n_init; ++r) {
    auto run = ss_kmeans(features, labels, k, derive_seed(seed, "ss_kmeans", static_cast<std::uint64_t>(r)),
                         max_iter);
    if (!best || run.objective.back() < best->objective.back()) best = std::move(run);
  }
  return std::move(*best);
}

Metrics evaluate(const MatrixXd& features, const GcdDataset& dataset, Index k, std::uint64_t seed,
                 int n_init, int max_iter) {
  if (features.rows() != dataset.size()) throw ShapeError("evaluate: features misaligned with dataset");
  const auto result = ss_kmeans_restarts(features, dataset.labels, k, seed, n_init, max_iter);
  std::vector<Index> predicted;
  std::vector<ClassId> truth;
  for (Index i = 0; i < dataset.size(); ++i) {
    if (dataset.is_labeled(i)) continue;
    predicted.push_back(result.assignment[static_cast<std::size_t>(i)]);
    truth.push_back(dataset.eval_labels[static_cast<std::size_t>(i)]);
  }
  Metrics m = hungarian_accuracy(predicted, truth, dataset.labeled_class_set);
  m.k_used = k;
  return m;
}

}  // namespace dccl
