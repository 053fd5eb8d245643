#include "qcmp/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qcmp {

std::string MetricReport::to_tsv() const {
  std::ostringstream out;
  out << "HR@5\tHR@10\tHR@20\tMRR@5\tMRR@10\tMRR@20\tNDCG@5\tNDCG@10\tNDCG@20\tSum\tUsers\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%d\n", hr5, hr10,
                hr20, mrr5, mrr10, mrr20, ndcg5, ndcg10, ndcg20, sum(), num_users);
  out << buf;
  return out.str();
}

std::array<double, 3> rank_metrics(int rank, int k) {
  if (rank > k) return {0.0, 0.0, 0.0};
  return {1.0, 1.0 / rank, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

int rank_of_target(const Eigen::Ref<const Eigen::RowVectorXd>& probs, int target,
                   const std::vector<int>& negatives) {
  double pt = probs(target - 1);
  int rank = 1;
  for (int c : negatives) {
    double pc = probs(c - 1);
    if (pc > pt || (pc == pt && c < target)) ++rank;
  }
  return rank;
}

namespace {

void accumulate(MetricReport& r, int rank) {
  auto m5 = rank_metrics(rank, 5);
  auto m10 = rank_metrics(rank, 10);
  auto m20 = rank_metrics(rank, 20);
  r.hr5 += m5[0];
  r.mrr5 += m5[1];
  r.ndcg5 += m5[2];
  r.hr10 += m10[0];
  r.mrr10 += m10[1];
  r.ndcg10 += m10[2];
  r.hr20 += m20[0];
  r.mrr20 += m20[1];
  r.ndcg20 += m20[2];
}

}  // namespace

MetricReport evaluate_model(const ModelParams& params, const std::vector<SplitSequence>& splits,
                            EvalSplit which, int batch_size) {
  MetricReport report;
  for (size_t at = 0; at < splits.size(); at += static_cast<size_t>(batch_size)) {
    size_t end = std::min(splits.size(), at + static_cast<size_t>(batch_size));
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(end - at);
    for (size_t i = at; i < end; ++i) {
      std::vector<int> input = splits[i].train_items;
      if (which == EvalSplit::Test) input.push_back(splits[i].valid_target);
      prefixes.push_back(std::move(input));
    }
    Eigen::MatrixXd probs = score_next_items(params, prefixes);
    for (size_t i = at; i < end; ++i) {
      const SplitSequence& s = splits[i];
      int target = which == EvalSplit::Valid ? s.valid_target : s.test_target;
      const auto& negs = which == EvalSplit::Valid ? s.neg_valid : s.neg_test;
      int rank = rank_of_target(probs.row(static_cast<Eigen::Index>(i - at)), target, negs);
      accumulate(report, rank);
    }
  }
  report.num_users = static_cast<int>(splits.size());
  if (report.num_users > 0) {
    double n = report.num_users;
    report.hr5 /= n;
    report.hr10 /= n;
    report.hr20 /= n;
    report.mrr5 /= n;
    report.mrr10 /= n;
    report.mrr20 /= n;
    report.ndcg5 /= n;
    report.ndcg10 /= n;
    report.ndcg20 /= n;
  }
  return report;
}

double dist_degradation(double sum_noisy, double sum_clean) {
  return (sum_noisy - sum_clean) / sum_clean;
}

RobustnessReport robustness_eval(const ModelParams& params,
                                 const std::vector<SplitSequence>& clean,
                                 const std::vector<SplitSequence>& noisy, int batch_size) {
  RobustnessReport r;
  r.clean = evaluate_model(params, clean, EvalSplit::Test, batch_size);
  r.noisy = evaluate_model(params, noisy, EvalSplit::Test, batch_size);
  r.dist = dist_degradation(r.noisy.sum(), r.clean.sum());
  return r;
}

CoocTable::CoocTable(const std::vector<SplitSequence>& splits) {
  int max_item = 0;
  for (const auto& s : splits) {
    for (int it : s.train_items) max_item = std::max(max_item, it);
  }
  users_with_.resize(max_item + 1);
  for (size_t i = 0; i < splits.size(); ++i) {
    std::vector<int> items = splits[i].train_items;
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    for (int it : items) users_with_[it].push_back(static_cast<int>(i));
  }
}

long long CoocTable::count(int item_a, int item_b) const {
  if (item_a <= 0 || item_b <= 0 || item_a >= static_cast<int>(users_with_.size()) ||
      item_b >= static_cast<int>(users_with_.size())) {
    return 0;
  }
  const auto& a = users_with_[item_a];
  const auto& b = users_with_[item_b];
  long long n = 0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (a[i] > b[j]) ++j;
    else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

double cooccurrence_quality(const std::vector<int>& view, int target, const CoocTable& table) {
  if (view.empty()) return 0.0;
  double sum = 0.0;
  for (int it : view) sum += static_cast<double>(table.count(it, target));
  return sum / static_cast<double>(view.size());
}

QualityAnalysis confidence_quality_analysis(const ModelParams& frozen_model,
                                            const AugmentParams& frozen_aug,
                                            const std::vector<SplitSequence>& splits,
                                            const TargetIndex& tidx, const SimilarityIndex& sidx,
                                            int k, uint64_t seed, const CoocTable& table,
                                            int max_anchors) {
  QualityAnalysis qa;
  int n = static_cast<int>(splits.size());
  if (max_anchors > 0) n = std::min(n, max_anchors);
  for (int i = 0; i < n; ++i) {
    const SplitSequence& s = splits[i];
    std::vector<int> input = s.input_items();
    if (input.empty()) continue;

    CollabContext c1 = sample_collab(splits, i, tidx, sidx, CollabCondition::SameTarget, k, seed);
    CollabContext c2 = sample_collab(splits, i, tidx, sidx, CollabCondition::Similar, k, seed);
    ag::Mat slots = encode_with_sentinel(frozen_model, input);
    AugmentedView v1 =
        generate_view(frozen_model, frozen_aug, input, slots, encode_contexts(frozen_model, c1.sequences));
    AugmentedView v2 =
        generate_view(frozen_model, frozen_aug, input, slots, encode_contexts(frozen_model, c2.sequences));

    if (v1.quality == v2.quality) {
      ++qa.ties;
      continue;
    }
    const AugmentedView& high = v1.quality > v2.quality ? v1 : v2;
    const AugmentedView& low = v1.quality > v2.quality ? v2 : v1;
    double qh = cooccurrence_quality(high.items, s.target(), table);
    double ql = cooccurrence_quality(low.items, s.target(), table);
    if (qh > ql) ++qa.high_wins;
    else if (qh < ql) ++qa.low_wins;
    else ++qa.ties;
  }
  return qa;
}

}  // namespace qcmp
