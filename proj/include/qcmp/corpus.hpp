#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qcmp/rng.hpp"

namespace qcmp {

/// Interaction data with dense ids. Users are 1..num_users(), items are
/// 1..num_items; id 0 is reserved for padding. sequences[u-1] is user u's
/// item list in ascending timestamp order (ties keep input order).
struct InteractionCorpus {
  int num_items = 0;
  std::vector<std::vector<int>> sequences;
  std::vector<std::string> user_raw;  // raw id for dense user u at [u-1]
  std::vector<std::string> item_raw;  // raw id for dense item i at [i-1]
  long long num_records = 0;

  int num_users() const { return static_cast<int>(sequences.size()); }
  double avg_length() const {
    return sequences.empty() ? 0.0 : static_cast<double>(num_records) / num_users();
  }
  /// Fraction of the user-item matrix that is filled.
  double density() const {
    double cells = static_cast<double>(num_users()) * num_items;
    return cells > 0 ? num_records / cells : 0.0;
  }
  /// Content hash used to key cached index files.
  uint64_t content_hash() const;
};

enum class InputFormat { Triples, SequenceLines };

/// One user's leave-one-out split. train_items is already truncated to the
/// most recent max_len items; the two targets are the last two raw items.
struct SplitSequence {
  int user = 0;
  std::vector<int> train_items;
  int valid_target = 0;
  int test_target = 0;
  std::vector<int> neg_valid;
  std::vector<int> neg_test;

  /// Label predicted during training (last training item).
  int target() const { return train_items.back(); }
  /// Model input for the training prediction (train_items minus the label).
  std::vector<int> input_items() const {
    return std::vector<int>(train_items.begin(), train_items.end() - 1);
  }
};

/// keep/delete/insert probabilities; must be nonnegative and sum to 1.
struct NoiseRatio {
  double keep = 1.0;
  double del = 0.0;
  double insert = 0.0;

  void validate() const;
};

/// Parses an interaction file. Triples are `user item timestamp` lines;
/// sequence-lines are `user item1 item2 ...` already in order. Raw ids are
/// remapped to dense integers in first-appearance order.
InteractionCorpus load_interactions(const std::string& path, InputFormat format);

/// Iteratively removes users and items with fewer than 5 interactions until
/// a fixed point, then re-densifies ids.
InteractionCorpus five_core_filter(const InteractionCorpus& corpus);

/// Splits every sequence into train / validation target / test target.
/// Requires every sequence length >= 3. Training items keep the most recent
/// max_len entries.
std::vector<SplitSequence> leave_one_out_split(const InteractionCorpus& corpus, int max_len = 50);

/// Samples n items the user never interacted with, uniformly without
/// replacement, into neg_valid and neg_test. Reproducible per (user, seed).
void sample_eval_negatives(SplitSequence& split, const InteractionCorpus& corpus, int n,
                           uint64_t seed);

/// Applies keep/delete/insert noise to the test-time input items
/// (train_items); both targets are untouched. Inserts place one uniformly
/// random item before the position. The result keeps the most recent
/// max_len items.
SplitSequence simulate_noise(const SplitSequence& split, const NoiseRatio& ratio, int num_items,
                             uint64_t seed, int max_len = 50);

struct CorpusStats {
  int users = 0;
  int items = 0;
  long long records = 0;
  double avg_len = 0.0;
  double density = 0.0;
};

CorpusStats corpus_stats(const InteractionCorpus& corpus);

/// Writes sequences (dense ids, sequence-lines format), the two id maps,
/// and a statistics summary into dir.
void save_corpus_dir(const InteractionCorpus& corpus, const std::string& dir);

/// Loads a directory produced by save_corpus_dir.
InteractionCorpus load_corpus_dir(const std::string& dir);

}  // namespace qcmp
