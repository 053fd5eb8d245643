#include "qcmp/collab_index.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace qcmp {

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::unordered_set<int> sa(a.begin(), a.end());
  std::unordered_set<int> sb(b.begin(), b.end());
  size_t inter = 0;
  for (int x : sa) inter += sb.count(x);
  size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

TargetIndex build_target_index(const std::vector<SplitSequence>& splits) {
  TargetIndex idx;
  for (size_t i = 0; i < splits.size(); ++i) {
    idx.by_target[splits[i].target()].push_back(static_cast<int>(i));
  }
  return idx;
}

SimilarityIndex build_similarity_candidates(const std::vector<SplitSequence>& splits,
                                            double sigma) {
  if (!(sigma > 0.0 && sigma < 1.0)) throw std::runtime_error("sim_threshold must be in (0,1)");
  const int n = static_cast<int>(splits.size());

  // Distinct sorted item sets per sequence.
  std::vector<std::vector<int>> sets(n);
  int max_item = 0;
  for (int i = 0; i < n; ++i) {
    sets[i] = splits[i].train_items;
    std::sort(sets[i].begin(), sets[i].end());
    sets[i].erase(std::unique(sets[i].begin(), sets[i].end()), sets[i].end());
    if (!sets[i].empty()) max_item = std::max(max_item, sets[i].back());
  }

  std::vector<std::vector<int>> inverted(max_item + 1);
  for (int i = 0; i < n; ++i) {
    for (int item : sets[i]) inverted[item].push_back(i);
  }

  SimilarityIndex idx;
  idx.sigma = sigma;
  idx.candidates.resize(n);
  std::vector<int> overlap(n, 0);
  std::vector<int> touched;
  for (int u = 0; u < n; ++u) {
    touched.clear();
    for (int item : sets[u]) {
      for (int v : inverted[item]) {
        if (v == u) continue;
        if (overlap[v] == 0) touched.push_back(v);
        ++overlap[v];
      }
    }
    std::sort(touched.begin(), touched.end());
    auto& out = idx.candidates[u];
    for (int v : touched) {
      int inter = overlap[v];
      overlap[v] = 0;
      int uni = static_cast<int>(sets[u].size() + sets[v].size()) - inter;
      if (uni > 0 && static_cast<double>(inter) / uni > sigma) out.push_back(v);
    }
  }
  return idx;
}

bool SimilarityIndex::save(const std::string& path, uint64_t corpus_hash) const {
  std::ofstream out(path);
  if (!out) return false;
  out << "qcmp-simidx 1 " << corpus_hash << ' ' << sigma << ' ' << candidates.size() << '\n';
  for (size_t u = 0; u < candidates.size(); ++u) {
    out << u;
    for (int v : candidates[u]) out << ' ' << v;
    out << '\n';
  }
  return static_cast<bool>(out);
}

bool SimilarityIndex::load(const std::string& path, uint64_t corpus_hash, double sigma,
                           SimilarityIndex& out) {
  std::ifstream in(path);
  if (!in) return false;
  std::string magic;
  int version = 0;
  uint64_t hash = 0;
  double file_sigma = 0.0;
  size_t n = 0;
  in >> magic >> version >> hash >> file_sigma >> n;
  if (!in || magic != "qcmp-simidx" || version != 1) return false;
  if (hash != corpus_hash || file_sigma != sigma) return false;  // stale cache
  in.ignore();
  out.sigma = sigma;
  out.candidates.assign(n, {});
  std::string line;
  for (size_t u = 0; u < n; ++u) {
    if (!std::getline(in, line)) return false;
    std::istringstream ss(line);
    size_t anchor;
    ss >> anchor;
    if (anchor != u) return false;
    int v;
    while (ss >> v) out.candidates[u].push_back(v);
  }
  return true;
}

CollabContext sample_collab(const std::vector<SplitSequence>& splits, int anchor_idx,
                            const TargetIndex& tidx, const SimilarityIndex& sidx,
                            CollabCondition condition, int k, uint64_t seed) {
  const SplitSequence& anchor = splits[anchor_idx];
  CollabContext ctx;
  ctx.anchor_user = anchor.user;
  ctx.condition = condition;

  auto same_target_pool = [&]() {
    std::vector<int> pool;
    for (int v : tidx.pool(anchor.target())) {
      if (v != anchor_idx) pool.push_back(v);
    }
    return pool;
  };

  std::vector<int> pool;
  if (condition == CollabCondition::Similar) {
    pool = sidx.candidates[anchor_idx];
    if (pool.empty()) pool = same_target_pool();  // fallback chain
  } else {
    pool = same_target_pool();
  }

  Rng rng = derive_rng(seed, {static_cast<uint64_t>(anchor.user),
                              condition == CollabCondition::Similar ? 2ull : 1ull});

  if (pool.empty()) {
    // Last resort: K copies of the anchor's own training items.
    ctx.sequences.assign(k, anchor.train_items);
    ctx.members.assign(k, anchor_idx);
    return ctx;
  }

  std::vector<int> chosen;
  chosen.reserve(k);
  if (static_cast<int>(pool.size()) >= k) {
    // Partial Fisher-Yates: first k entries of a uniform permutation.
    std::vector<int> p = pool;
    for (int i = 0; i < k; ++i) {
      size_t j = i + rng.next_below(p.size() - i);
      std::swap(p[i], p[j]);
      chosen.push_back(p[i]);
    }
  } else {
    for (int i = 0; i < k; ++i) chosen.push_back(pool[rng.next_below(pool.size())]);
  }

  ctx.sequences.reserve(k);
  for (int v : chosen) ctx.sequences.push_back(splits[v].train_items);
  ctx.members = std::move(chosen);
  return ctx;
}

}  // namespace qcmp
