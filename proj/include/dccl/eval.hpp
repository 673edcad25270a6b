#pragma once

#include "dccl/dataset.hpp"
#include "dccl/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <vector>

namespace dccl {

struct Metrics {
  double acc_all = 0;
  double acc_old = 0;
  double acc_new = 0;
  Index k_used = 0;
  Index num_old = 0;  // evaluated instances whose true class is Old
  Index num_new = 0;
  std::map<Index, ClassId> matching;  // cluster -> class
};

struct KMeansResult {
  std::vector<Index> assignment;
  MatrixXd centroids;
  std::vector<double> objective;  // sum of squared distances after each assignment step
  int iterations = 0;
};

/// Called after every assignment step with the iteration number and assignment.
using KMeansObserver = std::function<void(int, std::span<const Index>)>;

/// Initial centroids: one per labeled class (ascending class id), as the
/// renormalized class mean; the rest by D^2-weighted sampling over
/// unlabeled rows. Returns the centroids and the class id of each labeled one.
MatrixXd ss_kmeans_init(const MatrixXd& features, std::span<const Label> labels, Index k,
                        std::uint64_t seed, std::vector<ClassId>* labeled_classes = nullptr);

/// Semi-supervised k-means: labeled rows stay with their class centroid,
/// unlabeled rows go to the nearest centroid; centroids are renormalized
/// means. Stops at an assignment fixpoint or after max_iter steps.
KMeansResult ss_kmeans(const MatrixXd& features, std::span<const Label> labels, Index k,
                       std::uint64_t seed, int max_iter = 100, const KMeansObserver& observer = {});

/// Clustering accuracy under the best one-to-one cluster->class matching,
/// computed over all instances; Old/New accuracies reuse that matching.
Metrics hungarian_accuracy(std::span<const Index> predicted, std::span<const ClassId> truth,
                           const std::set<ClassId>& old_classes);

/// Minimum-cost assignment for an r×c cost matrix. Returns for every row the
/// matched column or -1 (when r > c).
std::vector<Index> solve_assignment(const MatrixXd& cost);

/// Best of `n_init` ss_kmeans runs by final objective.
KMeansResult ss_kmeans_restarts(const MatrixXd& features, std::span<const Label> labels, Index k,
                                std::uint64_t seed, int n_init = 10, int max_iter = 100);

/// Full test-time protocol: ss_kmeans (with restarts) on every row, accuracy
/// on unlabeled rows.
Metrics evaluate(const MatrixXd& features, const GcdDataset& dataset, Index k, std::uint64_t seed,
                 int n_init = 10, int max_iter = 100);

}  // namespace dccl
