#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qcmp/checkpoint.hpp"
#include "qcmp/co_augment.hpp"
#include "qcmp/collab_index.hpp"
#include "qcmp/config.hpp"
#include "qcmp/contrastive.hpp"
#include "qcmp/corpus.hpp"
#include "qcmp/evaluate.hpp"
#include "qcmp/optimizer.hpp"
#include "qcmp/seq_model.hpp"

namespace qcmp {

enum class Variant { Full, WoLcl, WoQa, WCol1, WCol2, Heuristic, Vanilla };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

/// Thrown when a training loss turns non-finite.
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 0.001;
  int batch_size = 256;
  int stage1_k = 30;
  int stage2_k = 10;
  int stage1_epochs = 30;
  int stage2_epochs = 100;
  int patience = 10;
  double grad_clip = 5.0;
  uint64_t seed = 42;
  Variant variant = Variant::Full;
  NoiseRatio corrupt_ratio{0.4, 0.5, 0.1};
  double stage1_valid_frac = 0.05;
  bool init_encoder_from_stage1 = true;
  bool cache_frozen_encodings = true;
  LossWeights loss;
  double heuristic_ratio = 0.5;

  static TrainConfig from_config(const Config& cfg, int num_items);
};

/// Stage-one training state: the shared embeddings/encoder plus the
/// augmentation heads (the decoder rides along untrained so one checkpoint
/// carries a complete parameter set).
struct Stage1State {
  ModelParams model;
  AugmentParams aug;
};

struct Stage1Result {
  Checkpoint best;
  double best_valid_loss = 0.0;
  double valid_op_accuracy = 0.0;
  double valid_insert_recall5 = 0.0;
  std::vector<double> train_losses;  // one entry per epoch
  std::vector<double> step_losses;   // one entry per optimizer step
};

/// Pre-trains the augmentation module on corrupt-and-reconstruct. Contexts
/// alternate between the same-target and similar pools per epoch. Saves
/// stage1_best.ckpt / stage1_last.ckpt under out_dir when it is non-empty;
/// resumes from `resume` when given (epoch seeds are derived, so a resumed
/// run reproduces the uninterrupted trajectory).
Stage1Result pretrain_stage1(const std::vector<SplitSequence>& splits, const TargetIndex& tidx,
                             const SimilarityIndex& sidx, const TrainConfig& cfg,
                             const std::string& config_text, const std::string& out_dir,
                             std::ostream* log,
                             const Checkpoint* resume = nullptr);

struct Stage2Result {
  Checkpoint best;
  double best_valid_ndcg10 = 0.0;
  int best_epoch = 0;
  std::vector<double> train_losses;
  std::vector<double> step_losses;
};

/// Joint training of the recommender with the quality-aware contrastive
/// objectives over views from the frozen stage-one module. The stage-one
/// checkpoint is required for every variant except vanilla and heuristic.
Stage2Result train_stage2(const std::vector<SplitSequence>& splits, const TargetIndex& tidx,
                          const SimilarityIndex& sidx, const TrainConfig& cfg,
                          const Checkpoint* stage1, const std::string& config_text,
                          const std::string& out_dir, std::ostream* log,
                          const Checkpoint* resume = nullptr);

/// Rebuilds the stage-one parameter set from a checkpoint.
Stage1State stage1_from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg);

/// Extracts the recommender parameters from a stage-two checkpoint.
ModelParams model_from_checkpoint(const Checkpoint& ck, const ModelConfig& cfg);

/// Extracts the frozen augmenter (encoder + heads) from a stage-two
/// checkpoint; returns false if the checkpoint carries none (vanilla or
/// heuristic run).
bool frozen_from_checkpoint(const Checkpoint& ck, const ModelConfig& cfg, ModelParams& model,
                            AugmentParams& aug);

}  // namespace qcmp
