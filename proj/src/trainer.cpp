#include "dccl/trainer.hpp"

#include "dccl/memory.hpp"
#include "dccl/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

namespace dccl {

void TrainConfig::validate() const {
  if (max_epoch < 1) throw InvalidArgument("max_epoch must be >= 1");
  if (tau_i < 1) throw InvalidArgument("tau_i must be >= 1");
  if (n_c < 2) throw InvalidArgument("n_c must be >= 2");
  if (n_i < 1) throw InvalidArgument("n_i must be >= 1");
  if (instance_batch < 2) throw InvalidArgument("instance_batch must be >= 2");
  if (!(eta >= 0.0 && eta < 1.0)) throw InvalidArgument("eta must lie in [0,1)");
  if (!(lr_extractor >= 0.0 && lr_head >= 0.0)) throw InvalidArgument("learning rates must be >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw InvalidArgument("sgd momentum must lie in [0,1)");
  if (!(augment_strength >= 0.0)) throw InvalidArgument("augment strength must be >= 0");
  if (feature_dim < 1 || projection_dim < 1) throw InvalidArgument("encoder widths must be >= 1");
  if (isometric_init && extractor_hidden.size() != 1) {
    throw InvalidArgument("isometric init needs exactly one extractor hidden layer");
  }
  loss.validate();
  if (!(graph.tau_f >= 0.0 && graph.tau_f <= 1.0)) throw InvalidArgument("tau_f must lie in [0,1]");
  if (graph.knn_k < 1) throw InvalidArgument("knn_k must be >= 1");
}

ConceptionBatch sample_conception_batch(const ConceptionAssignment& assignment, Index n_c, Index n_i,
                                        std::uint64_t seed) {
  const Index k = assignment.num_conceptions();
  if (n_c < 1 || n_i < 1) throw InvalidArgument("sample_conception_batch: n_c and n_i must be >= 1");
  if (k < n_c) {
    throw InvalidArgument("sample_conception_batch: only " + std::to_string(k) +
                          " conceptions available for n_c = " + std::to_string(n_c) +
                          "; shrink n_c for this period");
  }
  Rng rng(seed);
  std::vector<Index> ids(static_cast<std::size_t>(k));
  std::iota(ids.begin(), ids.end(), Index{0});
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(n_c));

  const auto members = assignment.members();
  ConceptionBatch batch;
  batch.sampled = ids;
  batch.indices.reserve(static_cast<std::size_t>(n_c * n_i));
  for (Index c : ids) {
    auto pool = members[static_cast<std::size_t>(c)];
    if (static_cast<Index>(pool.size()) >= n_i) {
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(static_cast<std::size_t>(n_i));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      std::vector<Index> drawn;
      for (Index t = 0; t < n_i; ++t) drawn.push_back(pool[pick(rng)]);
      pool = std::move(drawn);
    }
    for (Index i : pool) {
      batch.indices.push_back(i);
      batch.conceptions.push_back(c);
    }
  }
  return batch;
}

InstanceBatch sample_instance_batch(const GcdDataset& dataset, Index size, std::uint64_t seed) {
  const Index m = dataset.size();
  if (size < 1 || size > m) {
    throw InvalidArgument("sample_instance_batch: size " + std::to_string(size) + " not in [1, " +
                          std::to_string(m) + "]");
  }
  Rng rng(seed);
  std::vector<Index> all(static_cast<std::size_t>(m));
  std::iota(all.begin(), all.end(), Index{0});
  // Partial Fisher-Yates: the first `size` slots are a uniform sample.
  for (Index t = 0; t < size; ++t) {
    std::uniform_int_distribution<Index> pick(t, m - 1);
    std::swap(all[static_cast<std::size_t>(t)], all[static_cast<std::size_t>(pick(rng))]);
  }
  InstanceBatch batch;
  batch.indices.assign(all.begin(), all.begin() + size);
  for (Index i : batch.indices) batch.labeled.push_back(dataset.is_labeled(i));
  return batch;
}

EncoderParams<double> init_encoder(Index input_dim, const TrainConfig& cfg) {
  std::vector<Index> ext = {input_dim};
  ext.insert(ext.end(), cfg.extractor_hidden.begin(), cfg.extractor_hidden.end());
  ext.push_back(cfg.feature_dim);
  std::vector<Index> head = {cfg.feature_dim};
  head.insert(head.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
  head.push_back(cfg.projection_dim);
  auto params = EncoderParams<double>::init(ext, head, derive_seed(cfg.seed, "encoder.init"));
  if (cfg.isometric_init) {
    if (cfg.extractor_hidden.size() != 1) {
      throw InvalidArgument("isometric init needs exactly one extractor hidden layer");
    }
    Rng rng(derive_seed(cfg.seed, "encoder.isometry"));
    params.extractor =
        Mlp<double>::near_isometry(input_dim, cfg.extractor_hidden.front(), cfg.feature_dim, rng);
  }
  return params;
}

MatrixXd extract_features(const EncoderParams<double>& params, const MatrixXd& inputs) {
  return forward(params, inputs).features;
}

ConceptionAssignment generate_conceptions(const MatrixXd& features, std::span<const Label> labels,
                                          const GraphConfig& graph, bool consolidate,
                                          std::uint64_t seed) {
  std::vector<Label> visible(labels.begin(), labels.end());
  if (!consolidate) std::fill(visible.begin(), visible.end(), kUnlabeled);
  const SimilarityGraph g = build_consolidated_graph(visible, features, graph);
  return cluster(g, seed);
}

namespace {

MatrixXd gather_rows(const MatrixXd& data, std::span<const Index> rows) {
  MatrixXd out(static_cast<Index>(rows.size()), data.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = data.row(rows[r]);
  return out;
}

}  // namespace

TrainResult train(const GcdDataset& dataset, const TrainConfig& cfg, const IterationSink& sink) {
  cfg.validate();
  dataset.validate();
  const MatrixXd& inputs = dataset.embeddings.data();
  const Index m = dataset.size();
  const Index batch_size = std::min(cfg.instance_batch, m);
  const Index iterations = (m + batch_size - 1) / batch_size;
  const auto& ab = cfg.ablation;
  const LossConfig& lc = cfg.loss;
  const bool use_conception = !ab.no_conception_loss && lc.alpha > 0.0;
  const bool use_dispersion = !ab.no_dispersion_loss && lc.beta > 0.0;

  TrainResult result;
  result.params = init_encoder(dataset.embeddings.dim(), cfg);
  auto& params = result.params;
  auto opt = OptimState<double>::for_params(params, cfg.lr_extractor, cfg.lr_head, cfg.sgd_momentum,
                                            cfg.max_epoch);
  std::optional<ConceptionMemory<double>> memory;

  std::uint64_t step = 0;
  for (Index epoch = 0; epoch < cfg.max_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    if (epoch % cfg.tau_i == 0) {
      const MatrixXd features = extract_features(params, inputs);
      result.assignment = generate_conceptions(
          features, dataset.labels, cfg.graph, !ab.no_consolidation,
          derive_seed(cfg.seed, "infomap", static_cast<std::uint64_t>(result.dcg_rounds)));
      memory = ConceptionMemory<double>::initialize(features, result.assignment, cfg.eta,
                                                    cfg.renorm_memory);
      ++result.dcg_rounds;
      log.dcg_round = true;
    }
    const Index k = result.assignment.num_conceptions();
    // Early rounds may find fewer conceptions than n_c; shrink to fit.
    const Index n_c = std::min(cfg.n_c, k);
    const bool conception_batch = (use_conception || use_dispersion) && k >= 2;

    opt.epoch = epoch;
    log.lr = cosine_lr(cfg.lr_extractor, epoch, cfg.max_epoch);
    log.num_conceptions = k;

    for (Index iter = 0; iter < iterations; ++iter, ++step) {
      LossReport<double> li, lcr, ldr;
      std::optional<ForwardResult<double>> fwd_i, fwd_c;
      ConceptionBatch cb;

      if (!ab.no_instance_loss) {
        const auto ib = sample_instance_batch(dataset, batch_size, derive_seed(cfg.seed, "batch.instance", step));
        const MatrixXd x = gather_rows(inputs, ib.indices);
        auto [v1, v2] = augment<double>(x, cfg.augment_strength, derive_seed(cfg.seed, "augment.instance", step));
        MatrixXd views(2 * x.rows(), x.cols());
        views << v1, v2;
        fwd_i = forward(params, views);
        std::vector<Label> labels;
        for (Index i : ib.indices) labels.push_back(dataset.labels[static_cast<std::size_t>(i)]);
        li = instance_loss<double>(fwd_i->projections, labels, lc.lambda, lc.tau_s, lc.tau_l);
      }

      if (conception_batch) {
        cb = sample_conception_batch(result.assignment, n_c, cfg.n_i,
                                     derive_seed(cfg.seed, "batch.conception", step));
        const MatrixXd x = gather_rows(inputs, cb.indices);
        auto views = augment<double>(x, cfg.augment_strength, derive_seed(cfg.seed, "augment.conception", step));
        fwd_c = forward(params, views.first);
        const auto& feats = fwd_c->features;
        if (use_conception) {
          lcr = conception_loss<double>(feats, cb.conceptions, memory->reps(), lc.tau_c,
                                        lc.include_positive_in_denominator);
        }
        if (use_dispersion) {
          ldr = dispersion_loss<double>(feats, cb.conceptions, cb.sampled, lc.tau_m, lc.dispersion_diagonal);
        }
        if (lcr.grads.size() == 0) lcr.grads = MatrixXd::Zero(feats.rows(), feats.cols());
        if (ldr.grads.size() == 0) ldr.grads = MatrixXd::Zero(feats.rows(), feats.cols());
      }

      const double alpha = use_conception ? lc.alpha : 0.0;
      const double beta = use_dispersion ? lc.beta : 0.0;
      const auto total = total_loss(li, lcr, ldr, alpha, beta);
      if (!std::isfinite(total.value)) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                    std::to_string(iter));
      }

      auto grads = params.zeros_like();
      if (fwd_i) accumulate(grads, backward(params, *fwd_i, MatrixXd{}, total.grad_projections));
      if (fwd_c && (alpha > 0.0 || beta > 0.0)) {
        accumulate(grads, backward(params, *fwd_c, total.grad_features, MatrixXd{}));
      }
      sgd_step(params, grads, opt);

      std::vector<Index> updated;
      if (fwd_c && !ab.no_momentum_update) {
        for (std::size_t t = 0; t < cb.indices.size(); ++t) {
          memory->momentum_update(fwd_c->features.row(static_cast<Index>(t)).transpose(), cb.conceptions[t]);
          updated.push_back(cb.conceptions[t]);
        }
        std::sort(updated.begin(), updated.end());
        updated.erase(std::unique(updated.begin(), updated.end()), updated.end());
      }

      log.loss.instance += total.components.instance;
      log.loss.conception += total.components.conception;
      log.loss.dispersion += total.components.dispersion;
      log.total += total.value;
      if (sink) {
        sink({epoch, iter, k, total.components, total.value, log.lr, cb.sampled, std::move(updated)});
      }
    }
    const auto denom = static_cast<double>(iterations);
    log.loss.instance /= denom;
    log.loss.conception /= denom;
    log.loss.dispersion /= denom;
    log.total /= denom;
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(log);
  }
  result.sgd_steps = opt.steps;
  return result;
}

}  // namespace dccl
