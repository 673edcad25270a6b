#pragma once

#include "dccl/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dccl {

struct LossConfig {
  double tau_c = 0.05;   // conception temperature
  double tau_s = 0.07;   // self-supervised temperature
  double tau_l = 0.05;   // supervised temperature
  double tau_m = 0.3;    // dispersion threshold
  double lambda = 0.35;  // supervised / self-supervised trade-off
  double alpha = 0.3;    // weight of the conception loss
  double beta = 0.1;     // weight of the dispersion loss
  bool include_positive_in_denominator = false;
  bool dispersion_diagonal = true;

  void validate() const {
    if (!(tau_c > 0 && tau_s > 0 && tau_l > 0)) throw InvalidArgument("temperatures must be > 0");
    if (!(lambda >= 0 && lambda <= 1)) throw InvalidArgument("lambda must lie in [0,1]");
    if (!(tau_m >= 0 && tau_m <= 1)) throw InvalidArgument("tau_m must lie in [0,1]");
    if (!(alpha >= 0 && beta >= 0)) throw InvalidArgument("alpha and beta must be >= 0");
  }
};

/// Scalar loss and its gradient with respect to the input rows.
template <typename Scalar>
struct LossReport {
  Scalar value = 0;
  Matrix<Scalar> grads;
};

struct LossComponents {
  double instance = 0;
  double conception = 0;
  double dispersion = 0;
};

template <typename Scalar>
struct TotalLoss {
  Scalar value = 0;
  LossComponents components;
  Matrix<Scalar> grad_projections;  // gradient w.r.t. the instance-batch projections
  Matrix<Scalar> grad_features;     // gradient w.r.t. the conception-batch features
};

namespace detail {

/// log(sum exp(x_j)) over the selected entries.
template <typename Scalar, typename Pred>
Scalar logsumexp(const Vector<Scalar>& x, Pred include) {
  Scalar hi = -std::numeric_limits<Scalar>::infinity();
  for (Index j = 0; j < x.size(); ++j) {
    if (include(j)) hi = std::max(hi, x(j));
  }
  Scalar sum = 0;
  for (Index j = 0; j < x.size(); ++j) {
    if (include(j)) sum += std::exp(x(j) - hi);
  }
  return hi + std::log(sum);
}

}  // namespace detail

/// Contrastive loss between batch features and the memory. Each row is
/// pulled toward its own conception; the denominator runs over the other
/// conceptions only, unless `include_positive` restores the usual softmax.
/// Averaged over rows. Memory rows are constants.
template <typename Scalar>
LossReport<Scalar> conception_loss(const Matrix<Scalar>& reps, std::span<const Index> conceptions,
                                   const Matrix<Scalar>& memory, Scalar tau_c,
                                   bool include_positive = false) {
  const Index n = reps.rows();
  const Index k = memory.rows();
  if (static_cast<Index>(conceptions.size()) != n) throw ShapeError("conception_loss: ids misaligned");
  if (memory.cols() != reps.cols()) throw ShapeError("conception_loss: dimension mismatch");
  if (k < 2) throw InvalidArgument("conception loss undefined with a single conception");
  if (n == 0) throw InvalidArgument("conception_loss: empty batch");

  LossReport<Scalar> out;
  out.grads = Matrix<Scalar>::Zero(n, reps.cols());
  const Matrix<Scalar> logits = reps * memory.transpose() / tau_c;
  for (Index i = 0; i < n; ++i) {
    const Index c = conceptions[static_cast<std::size_t>(i)];
    if (c < 0 || c >= k) throw InvalidArgument("conception_loss: conception id out of range");
    const Vector<Scalar> row = logits.row(i).transpose();
    auto in_denominator = [&](Index j) { return include_positive || j != c; };
    const Scalar lse = detail::logsumexp<Scalar>(row, in_denominator);
    out.value += lse - row(c);

    RowVector<Scalar> g = -memory.row(c);
    for (Index j = 0; j < k; ++j) {
      if (in_denominator(j)) g += std::exp(row(j) - lse) * memory.row(j);
    }
    out.grads.row(i) = g / (tau_c * static_cast<Scalar>(n));
  }
  out.value /= static_cast<Scalar>(n);
  return out;
}

/// Hinge on cosine similarity between the normalized in-batch means of every
/// ordered pair of sampled conceptions, averaged over N_C^2 pairs. Diagonal
/// pairs add the constant (1 - tau_m)+ unless `include_diagonal` is false.
template <typename Scalar>
LossReport<Scalar> dispersion_loss(const Matrix<Scalar>& reps, std::span<const Index> conceptions,
                                   std::span<const Index> sampled, Scalar tau_m,
                                   bool include_diagonal = true) {
  const Index n = reps.rows();
  const auto nc = static_cast<Index>(sampled.size());
  if (static_cast<Index>(conceptions.size()) != n) throw ShapeError("dispersion_loss: ids misaligned");
  if (nc == 0) throw InvalidArgument("dispersion_loss: no sampled conceptions");

  std::map<Index, Index> slot;
  for (Index m = 0; m < nc; ++m) {
    if (!slot.emplace(sampled[static_cast<std::size_t>(m)], m).second) {
      throw InvalidArgument("dispersion_loss: duplicate sampled conception");
    }
  }
  Matrix<Scalar> means = Matrix<Scalar>::Zero(nc, reps.cols());
  std::vector<Index> counts(static_cast<std::size_t>(nc), 0);
  for (Index i = 0; i < n; ++i) {
    auto it = slot.find(conceptions[static_cast<std::size_t>(i)]);
    if (it == slot.end()) continue;
    means.row(it->second) += reps.row(i);
    ++counts[static_cast<std::size_t>(it->second)];
  }
  Vector<Scalar> norms(nc);
  Matrix<Scalar> unit(nc, reps.cols());
  for (Index m = 0; m < nc; ++m) {
    if (counts[static_cast<std::size_t>(m)] == 0) {
      throw InvalidArgument("dispersion_loss: conception " +
                            std::to_string(sampled[static_cast<std::size_t>(m)]) +
                            " has no batch members");
    }
    means.row(m) /= static_cast<Scalar>(counts[static_cast<std::size_t>(m)]);
    norms(m) = means.row(m).norm();
    if (!(norms(m) > Scalar(0))) throw NonFiniteError("dispersion_loss: zero conception mean");
    unit.row(m) = means.row(m) / norms(m);
  }

  const Scalar scale = Scalar(1) / static_cast<Scalar>(nc * nc);
  LossReport<Scalar> out;
  const Matrix<Scalar> cos = unit * unit.transpose();
  Matrix<Scalar> g_unit = Matrix<Scalar>::Zero(nc, reps.cols());
  for (Index a = 0; a < nc; ++a) {
    for (Index b = 0; b < nc; ++b) {
      if (a == b) {
        if (include_diagonal) out.value += std::max(Scalar(0), Scalar(1) - tau_m);
        continue;
      }
      const Scalar h = cos(a, b) - tau_m;
      if (h <= Scalar(0)) continue;
      out.value += h;
      g_unit.row(a) += unit.row(b);
      g_unit.row(b) += unit.row(a);
    }
  }
  out.value *= scale;

  // Back through normalization: d unit / d mean = (I - u u^T) / |mean|.
  Matrix<Scalar> g_mean(nc, reps.cols());
  for (Index m = 0; m < nc; ++m) {
    const RowVector<Scalar> g = g_unit.row(m) * scale;
    g_mean.row(m) = (g - g.dot(unit.row(m)) * unit.row(m)) / norms(m);
  }
  out.grads = Matrix<Scalar>::Zero(n, reps.cols());
  for (Index i = 0; i < n; ++i) {
    auto it = slot.find(conceptions[static_cast<std::size_t>(i)]);
    if (it == slot.end()) continue;
    out.grads.row(i) = g_mean.row(it->second) / static_cast<Scalar>(counts[static_cast<std::size_t>(it->second)]);
  }
  return out;
}

/// Instance contrastive loss over two views. `projections` holds 2N rows:
/// rows [0, N) are the first view and rows [N, 2N) the second view of the
/// same instances. `labels` has N entries.
///
///   (1 - lambda) * InfoNCE(positive = other view, negatives = all other rows, tau_s)
///   + lambda * SupCon(labeled rows, positives = same label, tau_l)
///
/// The supervised term averages over labeled rows that have a positive and
/// is zero when none does.
template <typename Scalar>
LossReport<Scalar> instance_loss(const Matrix<Scalar>& projections, std::span<const Label> labels,
                                 Scalar lambda, Scalar tau_s, Scalar tau_l) {
  const auto n = static_cast<Index>(labels.size());
  if (n < 2) throw InvalidArgument("instance_loss: batch needs at least 2 instances");
  if (projections.rows() != 2 * n) throw ShapeError("instance_loss: expected two views per instance");
  const Index rows = 2 * n;

  LossReport<Scalar> out;
  out.grads = Matrix<Scalar>::Zero(rows, projections.cols());
  const Matrix<Scalar> sim = projections * projections.transpose();

  // Self-supervised term.
  if (lambda < Scalar(1)) {
    const Scalar w = (Scalar(1) - lambda) / static_cast<Scalar>(rows);
    Scalar total = 0;
    for (Index a = 0; a < rows; ++a) {
      const Index pos = a < n ? a + n : a - n;
      const Vector<Scalar> logit = sim.row(a).transpose() / tau_s;
      const Scalar lse = detail::logsumexp<Scalar>(logit, [&](Index j) { return j != a; });
      total += lse - logit(pos);
      RowVector<Scalar> g_anchor = -projections.row(pos);
      for (Index j = 0; j < rows; ++j) {
        if (j == a) continue;
        const Scalar p = std::exp(logit(j) - lse);
        g_anchor += p * projections.row(j);
        out.grads.row(j) += (w / tau_s) * (p - (j == pos ? Scalar(1) : Scalar(0))) * projections.row(a);
      }
      out.grads.row(a) += (w / tau_s) * g_anchor;
    }
    out.value += w * total;
  }

  // Supervised term over labeled rows.
  if (lambda > Scalar(0)) {
    std::vector<Index> labeled;
    for (Index a = 0; a < rows; ++a) {
      if (labels[static_cast<std::size_t>(a % n)]) labeled.push_back(a);
    }
    auto label_of = [&](Index a) { return *labels[static_cast<std::size_t>(a % n)]; };

    std::vector<Index> anchors;
    for (Index a : labeled) {
      for (Index p : labeled) {
        if (p != a && label_of(p) == label_of(a)) {
          anchors.push_back(a);
          break;
        }
      }
    }
    if (!anchors.empty()) {
      const Scalar w = lambda / static_cast<Scalar>(anchors.size());
      Scalar total = 0;
      Vector<Scalar> logit(static_cast<Index>(labeled.size()));
      for (Index a : anchors) {
        for (std::size_t t = 0; t < labeled.size(); ++t) {
          logit(static_cast<Index>(t)) = sim(a, labeled[t]) / tau_l;
        }
        const Scalar lse = detail::logsumexp<Scalar>(
            logit, [&](Index t) { return labeled[static_cast<std::size_t>(t)] != a; });
        Index num_pos = 0;
        Scalar pos_sum = 0;
        for (std::size_t t = 0; t < labeled.size(); ++t) {
          const Index j = labeled[t];
          if (j != a && label_of(j) == label_of(a)) {
            ++num_pos;
            pos_sum += logit(static_cast<Index>(t));
          }
        }
        total += lse - pos_sum / static_cast<Scalar>(num_pos);

        RowVector<Scalar> g_anchor = RowVector<Scalar>::Zero(projections.cols());
        for (std::size_t t = 0; t < labeled.size(); ++t) {
          const Index j = labeled[t];
          if (j == a) continue;
          const Scalar p = std::exp(logit(static_cast<Index>(t)) - lse);
          const Scalar target =
              label_of(j) == label_of(a) ? Scalar(1) / static_cast<Scalar>(num_pos) : Scalar(0);
          g_anchor += (p - target) * projections.row(j);
          out.grads.row(j) += (w / tau_l) * (p - target) * projections.row(a);
        }
        out.grads.row(a) += (w / tau_l) * g_anchor;
      }
      out.value += w * total;
    }
  }
  return out;
}

/// L_total = L_I + alpha * L_C + beta * L_D. L_C and L_D share the
/// conception-batch features, so their gradients are summed; L_I's gradient
/// is with respect to the instance-batch projections.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const LossReport<Scalar>& instance, const LossReport<Scalar>& conception,
                             const LossReport<Scalar>& dispersion, Scalar alpha, Scalar beta) {
  if (conception.grads.rows() != dispersion.grads.rows() ||
      conception.grads.cols() != dispersion.grads.cols()) {
    throw ShapeError("total_loss: conception and dispersion gradients differ in shape");
  }
  TotalLoss<Scalar> out;
  out.value = instance.value + alpha * conception.value + beta * dispersion.value;
  out.components = {static_cast<double>(instance.value), static_cast<double>(conception.value),
                    static_cast<double>(dispersion.value)};
  out.grad_projections = instance.grads;
  out.grad_features = alpha * conception.grads + beta * dispersion.grads;
  return out;
}

}  // namespace dccl
