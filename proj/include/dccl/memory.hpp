#pragma once

#include "dccl/infomap.hpp"
#include "dccl/types.hpp"

#include <cmath>
#include <string>

namespace dccl {

/// K×D buffer of conception representations. Stores nothing per instance.
template <typename Scalar>
class ConceptionMemory {
 public:
  /// Each row is the mean of its members' features. With `renormalize`
  /// rows are scaled back to unit length.
  static ConceptionMemory initialize(const Matrix<Scalar>& features,
                                     const ConceptionAssignment& assignment, Scalar eta,
                                     bool renormalize = true) {
    if (features.rows() != assignment.num_nodes()) {
      throw ShapeError("memory initialize: features and assignment are misaligned");
    }
    if (!(eta >= Scalar(0) && eta < Scalar(1))) throw InvalidArgument("eta must lie in [0,1)");
    const Index k = assignment.num_conceptions();
    ConceptionMemory mem;
    mem.eta_ = eta;
    mem.renormalize_ = renormalize;
    mem.reps_ = Matrix<Scalar>::Zero(k, features.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < features.rows(); ++i) {
      mem.reps_.row(assignment[i]) += features.row(i);
      ++counts[static_cast<std::size_t>(assignment[i])];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        throw InvalidArgument("memory initialize: conception " + std::to_string(c) + " is empty");
      }
      mem.reps_.row(c) /= static_cast<Scalar>(counts[static_cast<std::size_t>(c)]);
      if (renormalize) mem.normalize_row(c);
    }
    return mem;
  }

  /// mu_c <- eta * mu_c + (1 - eta) * v, then renormalized.
  void momentum_update(const Eigen::Ref<const Vector<Scalar>>& v, Index conception) {
    if (conception < 0 || conception >= num_conceptions()) {
      throw InvalidArgument("momentum_update: conception id " + std::to_string(conception) +
                            " out of range");
    }
    if (v.size() != dim()) throw ShapeError("momentum_update: dimension mismatch");
    reps_.row(conception) = eta_ * reps_.row(conception) + (Scalar(1) - eta_) * v.transpose();
    if (renormalize_) normalize_row(conception);
  }

  const Matrix<Scalar>& reps() const { return reps_; }
  Index num_conceptions() const { return reps_.rows(); }
  Index dim() const { return reps_.cols(); }
  Scalar eta() const { return eta_; }

 private:
  void normalize_row(Index c) {
    const Scalar n = reps_.row(c).norm();
    if (!(n > Scalar(0))) {
      throw NonFiniteError("conception " + std::to_string(c) + " collapsed to the zero vector");
    }
    reps_.row(c) /= n;
  }

  Matrix<Scalar> reps_;
  Scalar eta_ = Scalar(0.9);
  bool renormalize_ = true;
};

}  // namespace dccl
