#pragma once

#include "dccl/rng.hpp"
#include "dccl/types.hpp"

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dccl {

/// Affine layer y = x W + b, with W stored in×out.
template <typename Scalar>
struct Layer {
  Matrix<Scalar> weight;
  RowVector<Scalar> bias;

  Index in() const { return weight.rows(); }
  Index out() const { return weight.cols(); }
};

/// Stack of affine layers with tanh between them (none after the last).
template <typename Scalar>
struct Mlp {
  std::vector<Layer<Scalar>> layers;

  Index in() const { return layers.front().in(); }
  Index out() const { return layers.back().out(); }

  static Mlp xavier(const std::vector<Index>& dims, Rng& rng) {
    if (dims.size() < 2) throw InvalidArgument("Mlp needs at least one layer");
    Mlp m;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      std::uniform_real_distribution<double> u(-bound, bound);
      Layer<Scalar> layer;
      layer.weight.resize(dims[l], dims[l + 1]);
      for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = static_cast<Scalar>(u(rng));
      layer.bias = RowVector<Scalar>::Zero(dims[l + 1]);
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  /// One tanh hidden layer of width >= 2 * in, initialized so the network
  /// approximates the linear isometry x -> x Q (Q with orthonormal rows or
  /// columns). Each input coordinate feeds a +/- pair of hidden units whose
  /// difference is linear near zero.
  static Mlp near_isometry(Index in, Index hidden, Index out, Rng& rng) {
    if (hidden < 2 * in) throw InvalidArgument("near-isometry init needs hidden width >= 2 * input");
    Matrix<double> q;
    if (in == out) {
      q = Matrix<double>::Identity(in, out);
    } else {
      std::normal_distribution<double> normal(0.0, 1.0);
      const Index tall = std::max(in, out);
      const Index thin = std::min(in, out);
      Matrix<double> g(tall, thin);
      for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
      Eigen::HouseholderQR<Matrix<double>> qr(g);
      const Matrix<double> basis = qr.householderQ() * Matrix<double>::Identity(tall, thin);
      q = in >= out ? basis : Matrix<double>(basis.transpose());
    }
    Mlp m;
    Layer<Scalar> first{Matrix<Scalar>::Zero(in, hidden), RowVector<Scalar>::Zero(hidden)};
    Layer<Scalar> second{Matrix<Scalar>::Zero(hidden, out), RowVector<Scalar>::Zero(out)};
    for (Index j = 0; j < in; ++j) {
      first.weight(j, j) = Scalar(1);
      first.weight(j, in + j) = Scalar(-1);
      second.weight.row(j) = (Scalar(0.5) * q.row(j)).template cast<Scalar>();
      second.weight.row(in + j) = (Scalar(-0.5) * q.row(j)).template cast<Scalar>();
    }
    m.layers.push_back(std::move(first));
    m.layers.push_back(std::move(second));
    return m;
  }

  Mlp zeros_like() const {
    Mlp z;
    for (const auto& l : layers) {
      z.layers.push_back({Matrix<Scalar>::Zero(l.in(), l.out()), RowVector<Scalar>::Zero(l.out())});
    }
    return z;
  }
};

/// Feature extractor f and projection head h. Both outputs are L2-normalized
/// per row. `version` changes on every parameter update.
template <typename Scalar>
struct EncoderParams {
  Mlp<Scalar> extractor;
  Mlp<Scalar> head;
  std::uint64_t version = 0;

  static EncoderParams init(const std::vector<Index>& extractor_dims,
                            const std::vector<Index>& head_dims, std::uint64_t seed) {
    if (extractor_dims.back() != head_dims.front()) {
      throw ShapeError("encoder: head input must match extractor output");
    }
    Rng rng(seed);
    EncoderParams p;
    p.extractor = Mlp<Scalar>::xavier(extractor_dims, rng);
    p.head = Mlp<Scalar>::xavier(head_dims, rng);
    return p;
  }

  EncoderParams zeros_like() const { return {extractor.zeros_like(), head.zeros_like(), 0}; }

  Index input_dim() const { return extractor.in(); }
  Index feature_dim() const { return extractor.out(); }
  Index projection_dim() const { return head.out(); }

  /// Visits (name, tensor) pairs in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    auto walk = [&](auto& mlp, const std::string& prefix) {
      for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        f(prefix + "." + std::to_string(l) + ".weight", mlp.layers[l].weight);
        f(prefix + "." + std::to_string(l) + ".bias", mlp.layers[l].bias);
      }
    };
    walk(self.extractor, "extractor");
    walk(self.head, "head");
  }
};

template <typename Scalar>
struct MlpCache {
  std::vector<Matrix<Scalar>> inputs;  // input of every layer
  std::vector<Matrix<Scalar>> pre;     // pre-activation output of every layer
  Matrix<Scalar> raw;                  // un-normalized final output
  Vector<Scalar> norms;                // row norms of `raw`
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> features;     // N×D, unit rows
  Matrix<Scalar> projections;  // N×D_proj, unit rows
  MlpCache<Scalar> extractor_cache;
  MlpCache<Scalar> head_cache;
  std::uint64_t version = 0;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> mlp_forward(const Mlp<Scalar>& mlp, const Matrix<Scalar>& x, MlpCache<Scalar>& cache) {
  Matrix<Scalar> a = x;
  const std::size_t n = mlp.layers.size();
  cache.inputs.clear();
  cache.pre.clear();
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = mlp.layers[l];
    cache.inputs.push_back(a);
    Matrix<Scalar> z = a * layer.weight;
    z.rowwise() += layer.bias;
    cache.pre.push_back(z);
    a = l + 1 < n ? Matrix<Scalar>(z.array().tanh().matrix()) : z;
  }
  return a;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& raw, Vector<Scalar>& norms) {
  norms = raw.rowwise().norm();
  Matrix<Scalar> out = raw;
  for (Index r = 0; r < raw.rows(); ++r) {
    if (!(norms(r) > Scalar(0)) || !std::isfinite(static_cast<double>(norms(r)))) {
      throw NonFiniteError("encoder: cannot normalize a zero or non-finite output row");
    }
    out.row(r) /= norms(r);
  }
  return out;
}

/// Gradient through y = x / |x| given dL/dy and y: (g - (g·y) y) / |x|.
template <typename Scalar>
Matrix<Scalar> normalize_backward(const Matrix<Scalar>& grad, const Matrix<Scalar>& unit,
                                  const Vector<Scalar>& norms) {
  Matrix<Scalar> out(grad.rows(), grad.cols());
  for (Index r = 0; r < grad.rows(); ++r) {
    out.row(r) = (grad.row(r) - grad.row(r).dot(unit.row(r)) * unit.row(r)) / norms(r);
  }
  return out;
}

/// Accumulates parameter gradients into `grads`; returns dL/dinput.
template <typename Scalar>
Matrix<Scalar> mlp_backward(const Mlp<Scalar>& mlp, const MlpCache<Scalar>& cache,
                            Matrix<Scalar> grad_out, Mlp<Scalar>& grads) {
  const std::size_t n = mlp.layers.size();
  for (std::size_t l = n; l-- > 0;) {
    if (l + 1 < n) {
      const auto t = cache.pre[l].array().tanh();
      grad_out = (grad_out.array() * (Scalar(1) - t * t)).matrix();
    }
    grads.layers[l].weight.noalias() += cache.inputs[l].transpose() * grad_out;
    grads.layers[l].bias += grad_out.colwise().sum();
    grad_out = (grad_out * mlp.layers[l].weight.transpose()).eval();
  }
  return grad_out;
}

}  // namespace detail

template <typename Scalar>
ForwardResult<Scalar> forward(const EncoderParams<Scalar>& params, const Matrix<Scalar>& inputs) {
  if (inputs.cols() != params.input_dim()) {
    throw ShapeError("encoder forward: input width " + std::to_string(inputs.cols()) +
                     " does not match " + std::to_string(params.input_dim()));
  }
  ForwardResult<Scalar> r;
  r.version = params.version;
  auto& ec = r.extractor_cache;
  ec.raw = detail::mlp_forward(params.extractor, inputs, ec);
  r.features = detail::normalize_rows(ec.raw, ec.norms);
  auto& hc = r.head_cache;
  hc.raw = detail::mlp_forward(params.head, r.features, hc);
  r.projections = detail::normalize_rows(hc.raw, hc.norms);
  return r;
}

/// Parameter gradients given upstream gradients w.r.t. the normalized
/// features and projections. Either upstream may be empty (treated as zero).
template <typename Scalar>
EncoderParams<Scalar> backward(const EncoderParams<Scalar>& params, const ForwardResult<Scalar>& cache,
                               const Matrix<Scalar>& grad_features,
                               const Matrix<Scalar>& grad_projections) {
  if (cache.version != params.version) throw Error("encoder backward: stale forward cache");
  EncoderParams<Scalar> grads = params.zeros_like();
  const Index n = cache.features.rows();
  Matrix<Scalar> g_feat = Matrix<Scalar>::Zero(n, params.feature_dim());
  if (grad_projections.size() > 0) {
    if (grad_projections.rows() != n || grad_projections.cols() != params.projection_dim()) {
      throw ShapeError("encoder backward: projection gradient shape mismatch");
    }
    const Matrix<Scalar> g_raw = detail::normalize_backward(grad_projections, cache.projections,
                                                            cache.head_cache.norms);
    g_feat += detail::mlp_backward(params.head, cache.head_cache, g_raw, grads.head);
  }
  if (grad_features.size() > 0) {
    if (grad_features.rows() != n || grad_features.cols() != params.feature_dim()) {
      throw ShapeError("encoder backward: feature gradient shape mismatch");
    }
    g_feat += grad_features;
  }
  const Matrix<Scalar> g_raw =
      detail::normalize_backward(g_feat, cache.features, cache.extractor_cache.norms);
  detail::mlp_backward(params.extractor, cache.extractor_cache, g_raw, grads.extractor);
  return grads;
}

/// Element-wise sum of two gradient sets.
template <typename Scalar>
void accumulate(EncoderParams<Scalar>& into, const EncoderParams<Scalar>& add) {
  auto sum = [](Mlp<Scalar>& a, const Mlp<Scalar>& b) {
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      a.layers[l].weight += b.layers[l].weight;
      a.layers[l].bias += b.layers[l].bias;
    }
  };
  sum(into.extractor, add.extractor);
  sum(into.head, add.head);
}

/// base * (1 + cos(pi * epoch / max_epoch)) / 2
inline double cosine_lr(double base, Index epoch, Index max_epoch) {
  if (max_epoch <= 0) throw InvalidArgument("cosine_lr: max_epoch must be > 0");
  if (epoch < 0 || epoch > max_epoch) throw InvalidArgument("cosine_lr: epoch outside [0, max_epoch]");
  return base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                static_cast<double>(max_epoch))) / 2.0;
}

template <typename Scalar>
struct OptimState {
  EncoderParams<Scalar> velocity;
  double lr_extractor = 0.01;
  double lr_head = 0.1;
  double momentum = 0.9;
  Index epoch = 0;
  Index max_epoch = 1;
  std::uint64_t steps = 0;

  static OptimState for_params(const EncoderParams<Scalar>& p, double lr_extractor, double lr_head,
                               double momentum, Index max_epoch) {
    return {p.zeros_like(), lr_extractor, lr_head, momentum, 0, max_epoch, 0};
  }
};

/// velocity = momentum * velocity + grad; param -= lr(epoch) * velocity.
template <typename Scalar>
void sgd_step(EncoderParams<Scalar>& params, const EncoderParams<Scalar>& grads, OptimState<Scalar>& opt) {
  auto step = [&](Mlp<Scalar>& p, const Mlp<Scalar>& g, Mlp<Scalar>& v, double base) {
    if (p.layers.size() != g.layers.size() || p.layers.size() != v.layers.size()) {
      throw ShapeError("sgd_step: layer count mismatch");
    }
    const auto lr = static_cast<Scalar>(cosine_lr(base, opt.epoch, opt.max_epoch));
    const auto mu = static_cast<Scalar>(opt.momentum);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      if (g.layers[l].weight.rows() != p.layers[l].weight.rows() ||
          g.layers[l].weight.cols() != p.layers[l].weight.cols()) {
        throw ShapeError("sgd_step: gradient shape mismatch");
      }
      v.layers[l].weight = mu * v.layers[l].weight + g.layers[l].weight;
      v.layers[l].bias = mu * v.layers[l].bias + g.layers[l].bias;
      p.layers[l].weight -= lr * v.layers[l].weight;
      p.layers[l].bias -= lr * v.layers[l].bias;
    }
  };
  step(params.extractor, grads.extractor, opt.velocity.extractor, opt.lr_extractor);
  step(params.head, grads.head, opt.velocity.head, opt.lr_head);
  ++params.version;
  ++opt.steps;
}

/// Two independently perturbed views: additive N(0, strength^2) noise and,
/// when `dropout` is set, coordinates zeroed with probability strength / 2.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> augment(const Matrix<Scalar>& inputs, double strength,
                                                  std::uint64_t seed, bool dropout = true) {
  if (!(strength >= 0.0)) throw InvalidArgument("augment: strength must be >= 0");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution drop(std::min(1.0, strength / 2.0));
  auto view = [&] {
    Matrix<Scalar> v = inputs;
    if (strength == 0.0) return v;
    for (Index i = 0; i < v.size(); ++i) {
      v.data()[i] += static_cast<Scalar>(strength * noise(rng));
      if (dropout && drop(rng)) v.data()[i] = Scalar(0);
    }
    return v;
  };
  Matrix<Scalar> first = view();
  Matrix<Scalar> second = view();
  return {std::move(first), std::move(second)};
}

/// Binary checkpoint: magic, version, a text manifest listing every tensor
/// shape plus metadata, then all tensors as little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams<double>& params,
                     const std::map<std::string, std::string>& metadata = {});

struct Checkpoint {
  EncoderParams<double> params;
  std::map<std::string, std::string> metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dccl
