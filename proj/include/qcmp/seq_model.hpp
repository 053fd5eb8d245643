#pragma once

#include <string>
#include <vector>

#include "qcmp/autograd.hpp"
#include "qcmp/rng.hpp"

namespace qcmp {

/// Model hyperparameters. The vocabulary is the real items 1..num_items
/// plus three special tokens: padding (0), mask, and end-of-insertion.
struct ModelConfig {
  int num_items = 0;
  int embed_dim = 64;
  int num_heads = 2;
  int num_layers = 2;
  double dropout = 0.5;
  int max_raw_len = 50;
  int max_aug_len = 60;
  int max_insert = 5;

  int vocab_size() const { return num_items + 3; }
  int pad_id() const { return 0; }
  int mask_id() const { return num_items + 1; }
  int eoi_id() const { return num_items + 2; }
  int pos_count() const { return max_aug_len + 2; }

  void validate() const;
};

/// Left-padded id batch. ids(b, p) is position p of row b; id 0 is padding.
struct SequenceBatch {
  Eigen::MatrixXi ids;
  std::vector<int> lengths;

  int rows() const { return static_cast<int>(ids.rows()); }
  int len() const { return static_cast<int>(ids.cols()); }
};

/// Builds a left-padded batch; rows longer than max_len keep their suffix.
SequenceBatch make_batch(const std::vector<std::vector<int>>& rows, int max_len);

/// One unidirectional Transformer stack (post-norm blocks, 4x feed-forward).
struct TransformerStack {
  struct Layer {
    ag::Param wq, bq, wk, bk, wv, bv, wo, bo;
    ag::Param ln1_g, ln1_b;
    ag::Param w1, b1, w2, b2;
    ag::Param ln2_g, ln2_b;
  };
  std::vector<Layer> layers;

  void init(const std::string& prefix, int embed_dim, int num_layers, Rng& rng);
  void collect(std::vector<ag::Param*>& out);

  /// x is (batch*len) x e; returns the last layer's representations.
  ag::NR forward(ag::Tape& tape, ag::NR x, const ag::BatchMeta& meta, double dropout,
                 Rng& drop_rng, bool train) const;
};

/// Embeddings plus the encoder and decoder stacks. The decoder re-encodes
/// the encoder output and shares the item embedding table for output logits.
struct ModelParams {
  ModelConfig cfg;
  ag::Param item_emb;  // vocab x e, row 0 (padding) zeroed
  ag::Param pos_emb;   // pos_count x e
  TransformerStack encoder;
  TransformerStack decoder;

  std::vector<ag::Param*> all();
  std::vector<const ag::Param*> all() const;
};

/// Variance-scaled uniform initialization; deterministic per seed.
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

/// Embeds a batch (item + position embeddings, then dropout) and runs a
/// stack. Positions are indexed from each sequence's start so that
/// representations do not depend on the padding amount.
ag::NR embed_batch(ag::Tape& tape, const SequenceBatch& batch, const ModelParams& params,
                   double dropout, Rng& drop_rng, bool train);

ag::NR encode(ag::Tape& tape, const SequenceBatch& batch, const ModelParams& params,
              bool train, Rng& drop_rng);

/// Decoder pass over encoder output followed by tied-embedding logits at
/// each row's last position (the appended mask token). Returns a
/// rows x num_items logits node; column j scores item j+1.
ag::NR decode_logits(ag::Tape& tape, ag::NR h_enc, const SequenceBatch& batch,
                     const ModelParams& params, bool train, Rng& drop_rng);

/// Softmax over the real-item vocabulary for each row of `logits`.
ag::NR next_item_probs(ag::Tape& tape, ag::NR logits);

/// Mean negative log-likelihood of the targets (1-based item ids); rows
/// with target <= 0 are excluded from the average.
ag::NR rec_loss(ag::Tape& tape, ag::NR logits, const std::vector<int>& targets);

/// Hidden state at each row's last non-padding position; empty rows give a
/// zero vector. `offset` selects positions before the end (offset 1 is the
/// position before the last one).
ag::NR sequence_repr(ag::Tape& tape, ag::NR h, const SequenceBatch& batch, int offset = 0);

/// Inference helper: P(next item) for each prefix, with the mask token
/// appended at the last position. Row r, column j is P(item j+1).
Eigen::MatrixXd score_next_items(const ModelParams& params,
                                 const std::vector<std::vector<int>>& prefixes);

}  // namespace qcmp
