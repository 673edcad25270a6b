#pragma once

#include "dccl/dataset.hpp"
#include "dccl/encoder.hpp"
#include "dccl/infomap.hpp"
#include "dccl/losses.hpp"
#include "dccl/simgraph.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace dccl {

/// Table-4 style switches; each one removes a single component.
struct AblationFlags {
  bool no_instance_loss = false;
  bool no_conception_loss = false;
  bool no_dispersion_loss = false;
  bool no_momentum_update = false;
  bool no_consolidation = false;
};

struct TrainConfig {
  Index max_epoch = 200;
  Index tau_i = 5;            // epochs between conception generation rounds
  Index n_c = 8;              // conceptions per conception batch
  Index n_i = 16;             // instances per conception
  Index instance_batch = 128;
  double lr_extractor = 0.01;
  double lr_head = 0.1;
  double sgd_momentum = 0.9;
  double eta = 0.9;           // memory momentum
  bool renorm_memory = true;
  double augment_strength = 0.1;
  std::vector<Index> extractor_hidden = {64};
  /// Start the extractor as a near-isometry of its input (stand-in for a
  /// pretrained backbone) instead of a random Xavier draw.
  bool isometric_init = true;
  Index feature_dim = 32;
  std::vector<Index> head_hidden = {32};
  Index projection_dim = 128;
  LossConfig loss;
  GraphConfig graph;
  AblationFlags ablation;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  Index epoch = 0;
  Index num_conceptions = 0;
  bool dcg_round = false;
  LossComponents loss;  // iteration means
  double total = 0;
  double lr = 0;        // extractor learning rate
  double wall_seconds = 0;
};

struct IterationRecord {
  Index epoch = 0;
  Index iter = 0;
  Index num_conceptions = 0;
  LossComponents loss;
  double total = 0;
  double lr = 0;
  std::vector<Index> sampled_conceptions;  // conceptions in this iteration's conception batch
  std::vector<Index> updated_memory_rows;  // distinct memory rows moved by momentum updates
};

using IterationSink = std::function<void(const IterationRecord&)>;

struct TrainResult {
  EncoderParams<double> params;
  ConceptionAssignment assignment;  // from the last conception generation round
  std::vector<EpochLog> epochs;
  Index dcg_rounds = 0;
  std::uint64_t sgd_steps = 0;
};

/// Conception-aware batch: n_c distinct conceptions, n_i members each
/// (drawn with replacement when a conception is smaller than n_i).
struct ConceptionBatch {
  std::vector<Index> indices;
  std::vector<Index> conceptions;  // conception of each index
  std::vector<Index> sampled;      // the n_c distinct conceptions
};

ConceptionBatch sample_conception_batch(const ConceptionAssignment& assignment, Index n_c, Index n_i,
                                        std::uint64_t seed);

struct InstanceBatch {
  std::vector<Index> indices;
  std::vector<bool> labeled;
};

InstanceBatch sample_instance_batch(const GcdDataset& dataset, Index size, std::uint64_t seed);

/// Encoder architecture implied by the config.
EncoderParams<double> init_encoder(Index input_dim, const TrainConfig& cfg);

/// Un-augmented, L2-normalized extractor features for every row.
MatrixXd extract_features(const EncoderParams<double>& params, const MatrixXd& inputs);

/// One conception-generation round: graph over current features, map-equation
/// clustering.
ConceptionAssignment generate_conceptions(const MatrixXd& features, std::span<const Label> labels,
                                          const GraphConfig& graph, bool consolidate,
                                          std::uint64_t seed);

/// Alternates conception generation (every tau_i epochs, starting before the
/// first) with dual-level contrastive training. Throws Error when a loss
/// turns non-finite.
TrainResult train(const GcdDataset& dataset, const TrainConfig& cfg, const IterationSink& sink = {});

}  // namespace dccl
