#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "qcmp/corpus.hpp"

namespace qcmp {

/// |set(a) ∩ set(b)| / |set(a) ∪ set(b)|. Both empty -> 0.
double jaccard(const std::vector<int>& a, const std::vector<int>& b);

/// Groups training sequences by their training target (the last train item).
struct TargetIndex {
  std::unordered_map<int, std::vector<int>> by_target;  // target item -> split indices

  const std::vector<int>& pool(int target) const {
    static const std::vector<int> empty;
    auto it = by_target.find(target);
    return it == by_target.end() ? empty : it->second;
  }
};

TargetIndex build_target_index(const std::vector<SplitSequence>& splits);

/// Per-anchor lists of training sequences with Jaccard similarity above the
/// threshold, computed through an inverted item index so only sequences
/// sharing at least one item are scored.
struct SimilarityIndex {
  double sigma = 0.2;
  std::vector<std::vector<int>> candidates;  // [anchor split index] -> split indices

  bool save(const std::string& path, uint64_t corpus_hash) const;
  static bool load(const std::string& path, uint64_t corpus_hash, double sigma,
                   SimilarityIndex& out);
};

SimilarityIndex build_similarity_candidates(const std::vector<SplitSequence>& splits, double sigma);

enum class CollabCondition { SameTarget, Similar };

/// K sampled collaborative sequences for one anchor under one condition.
/// `members` holds the chosen split indices (the anchor's own index when the
/// empty-pool fallback substituted the anchor's items).
struct CollabContext {
  int anchor_user = 0;
  CollabCondition condition = CollabCondition::SameTarget;
  std::vector<std::vector<int>> sequences;
  std::vector<int> members;
};

/// Samples K sequences from the condition's pool. Uniform without
/// replacement when the pool has at least K entries, with replacement
/// otherwise. Empty pools fall back: similar -> same-target -> K copies of
/// the anchor's own train items. Deterministic per (anchor, condition, seed).
CollabContext sample_collab(const std::vector<SplitSequence>& splits, int anchor_idx,
                            const TargetIndex& tidx, const SimilarityIndex& sidx,
                            CollabCondition condition, int k, uint64_t seed);

}  // namespace qcmp
