#pragma once

#include <optional>
#include <vector>

#include "qcmp/autograd.hpp"
#include "qcmp/collab_index.hpp"
#include "qcmp/corpus.hpp"
#include "qcmp/seq_model.hpp"

namespace qcmp {

/// Heads of the collaborative augmentation module: the per-position
/// operation projection, the copy-attention matrices, the copy/full gate,
/// and the insertion generator stack. The module shares the recommender's
/// embedding table and encoder.
struct AugmentParams {
  ag::Param op_w;      // 3 x e
  ag::Param w_co;      // e x e
  ag::Param u_co;      // e x e
  ag::Param v_co;      // e x 1
  ag::Param gate_co;   // 2 x e
  ag::Param gate_all;  // 2 x e
  TransformerStack generator;

  std::vector<ag::Param*> all();
};

AugmentParams init_augment_params(const ModelConfig& cfg, uint64_t seed);

/// Edit operations, in op-head column order. Exact probability ties during
/// generation resolve in this order (keep before delete before insert).
enum class EditOp { Keep = 0, Delete = 1, Insert = 2 };

/// Labels over a corrupted sequence plus one trailing sentinel slot.
/// inserts[t] is the ground-truth insertion list for slot t in generation
/// order (the item closest to the slot first). Applying the plan
/// reconstructs the original sequence exactly.
struct EditPlan {
  std::vector<EditOp> ops;                // size |corrupted| + 1
  std::vector<std::vector<int>> inserts;  // aligned with ops
};

std::vector<int> apply_edit_plan(const std::vector<int>& corrupted, const EditPlan& plan);

struct Corruption {
  std::vector<int> corrupted;
  EditPlan plan;
};

/// Randomly corrupts a sequence: per position keep it, delete it, or insert
/// one uniformly random noise item before it. Deletion runs are capped at
/// max_insert items and the corrupted length at max_len so the plan stays
/// exactly invertible. Returns nullopt if ten attempts all corrupt to an
/// empty sequence.
std::optional<Corruption> corrupt(const std::vector<int>& sequence, const NoiseRatio& ratio,
                                  int num_items, uint64_t seed, int max_insert = 5,
                                  int max_len = 60);

/// Tape-side bundle for one anchor's collaborative contexts.
struct ContextNodes {
  ag::NR stacked = nullptr;  // real positions of all K contexts, stacked
  std::vector<int> offsets;  // K+1 row offsets into `stacked`
  ag::NR pooled = nullptr;   // K x e mean representation per context
  ag::Vec occ;               // occurrence count per support column
};

/// Plain-matrix variant used with the frozen module.
struct ContextEncodings {
  ag::Mat stacked;
  std::vector<int> offsets;
  ag::Mat pooled;
  ag::Vec occ;
};

/// Occurrence counts over the insertion support (columns 0..num_items-1 are
/// items 1..num_items; the last column is the end-of-insertion token).
ag::Vec context_occurrence(const std::vector<std::vector<int>>& contexts, int num_items);

/// Encodes K context sequences with the (trainable) encoder on the tape and
/// compacts them to their real positions.
ContextNodes encode_contexts_on_tape(ag::Tape& tape, const ModelParams& params,
                                     const std::vector<std::vector<int>>& contexts, bool train,
                                     Rng& drop_rng);

/// Frozen-module encodings (no tape); cacheable across a whole stage.
ContextEncodings encode_contexts(const ModelParams& params,
                                 const std::vector<std::vector<int>>& contexts);

/// Encoder pass over `sequence` with the sentinel (mask) token appended;
/// rows are the |sequence|+1 augmentation slots.
ag::Mat encode_with_sentinel(const ModelParams& params, const std::vector<int>& sequence);

ContextNodes to_nodes(ag::Tape& tape, const ContextEncodings& enc);

/// Joint representation of the anchor slots and the collaborative contexts:
/// anchor + mean over contexts of dot-product attention onto each context.
ag::NR joint_repr(ag::Tape& tape, ag::NR anchor_slots, const ContextNodes& ctx);

/// Per-slot keep/delete/insert logits (rows x 3).
ag::NR operation_logits(ag::Tape& tape, ag::NR h_joint, AugmentParams& aug);

/// Generator-stack hiddens over [h_t, e_prefix...] with position embeddings;
/// row s is the state after consuming `prefix[0..s)`.
ag::NR insertion_generator_hiddens(ag::Tape& tape, const ModelParams& model, AugmentParams& aug,
                                   ag::NR h_t, const std::vector<int>& prefix, bool train,
                                   Rng& drop_rng);

/// Copy-gated insertion distribution for each generator state (rows of hc):
/// a convex gate mixes the occurrence-weighted context distribution with the
/// full-vocabulary softmax. Support columns are items 1..num_items then the
/// end token. If no context occurrences exist the gate collapses to the
/// full distribution.
ag::NR copy_mixture_probs(ag::Tape& tape, const ModelParams& model, AugmentParams& aug, ag::NR hc,
                          const ContextNodes& ctx, ag::NR e_sub);

/// Insertion-generator distributions for every slot of a teacher-forced
/// prefix: row s is the distribution after consuming `prefix[0..s)`, over
/// the support (items then end token). h_t seeds the generator; e_sub is
/// the gathered embedding rows for the support.
ag::NR insertion_step_probs(ag::Tape& tape, const ModelParams& model, AugmentParams& aug,
                            ag::NR h_t, const std::vector<int>& prefix, const ContextNodes& ctx,
                            ag::NR e_sub, bool train, Rng& drop_rng);

/// Gathered embedding rows for the insertion support, built once per tape.
ag::NR insertion_support_embeddings(ag::Tape& tape, const ModelParams& model);

/// Single-step convenience: the distribution over items and the end token
/// given the items generated so far.
ag::Vec insertion_step(const ModelParams& model, const AugmentParams& aug, const ag::Mat& h_t,
                       const std::vector<int>& generated, const ContextEncodings& ctx);

/// Sum of the operation cross-entropy and the teacher-forced insertion
/// negative log-likelihoods (including the end token) for one sequence.
ag::NR reconstruction_nll(ag::Tape& tape, const ModelParams& model, AugmentParams& aug,
                          ag::NR anchor_slots, const ContextNodes& ctx, const EditPlan& plan,
                          ag::NR e_sub, bool train, Rng& drop_rng);

/// An edited sequence with the confidence of each executed position
/// decision and the mean quality score.
struct AugmentedView {
  std::vector<int> items;
  std::vector<double> op_conf;  // one entry per input position, in [1/3, 1]
  double quality = 0.0;
  CollabCondition condition = CollabCondition::SameTarget;
};

enum class GenerateMode { Greedy };

/// Applies the frozen module to a sequence: argmax operation per slot,
/// greedy insertion decoding up to max_insert items, suffix truncation to
/// max_aug_len. A view that collapses to empty is replaced by the unedited
/// input with keep-probabilities as confidences.
AugmentedView generate_view(const ModelParams& frozen_model, const AugmentParams& frozen_aug,
                            const std::vector<int>& sequence, const ag::Mat& anchor_slots,
                            const ContextEncodings& ctx,
                            GenerateMode mode = GenerateMode::Greedy);

}  // namespace qcmp
