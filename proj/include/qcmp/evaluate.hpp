#pragma once

#include <array>
#include <string>
#include <vector>

#include "qcmp/co_augment.hpp"
#include "qcmp/collab_index.hpp"
#include "qcmp/corpus.hpp"
#include "qcmp/seq_model.hpp"

namespace qcmp {

/// HR / MRR / NDCG at cutoffs 5, 10, 20 plus their nine-metric sum.
struct MetricReport {
  double hr5 = 0, hr10 = 0, hr20 = 0;
  double mrr5 = 0, mrr10 = 0, mrr20 = 0;
  double ndcg5 = 0, ndcg10 = 0, ndcg20 = 0;
  int num_users = 0;

  double sum() const { return hr5 + hr10 + hr20 + mrr5 + mrr10 + mrr20 + ndcg5 + ndcg10 + ndcg20; }
  std::string to_tsv() const;
};

/// Metrics for a single relevant item at 1-based `rank`: hit, reciprocal
/// rank, and 1/log2(rank+1), all zero past the cutoff.
std::array<double, 3> rank_metrics(int rank, int k);

/// 1-based rank of the target among {target} ∪ negatives scored by `probs`
/// (column j is item j+1). Score ties break by ascending item id.
int rank_of_target(const Eigen::Ref<const Eigen::RowVectorXd>& probs, int target,
                   const std::vector<int>& negatives);

enum class EvalSplit { Valid, Test };

/// Scores each user's target against their fixed 99 negatives with the
/// next-item head; metrics averaged over users. Valid inputs are the train
/// items; test inputs append the validation item.
MetricReport evaluate_model(const ModelParams& params, const std::vector<SplitSequence>& splits,
                            EvalSplit which, int batch_size = 256);

struct RobustnessReport {
  MetricReport clean;
  MetricReport noisy;
  double dist = 0.0;  // (sum_noisy - sum_clean) / sum_clean
};

double dist_degradation(double sum_noisy, double sum_clean);

RobustnessReport robustness_eval(const ModelParams& params,
                                 const std::vector<SplitSequence>& clean,
                                 const std::vector<SplitSequence>& noisy, int batch_size = 256);

/// Co-occurrence counts over the training split: how many training
/// sequences contain both items.
class CoocTable {
 public:
  explicit CoocTable(const std::vector<SplitSequence>& splits);
  long long count(int item_a, int item_b) const;

 private:
  std::vector<std::vector<int>> users_with_;  // item -> sorted split indices
};

/// Mean co-occurrence count between the view's items and the target; an
/// empty view scores 0. Item order in the view does not matter.
double cooccurrence_quality(const std::vector<int>& view, int target, const CoocTable& table);

struct QualityAnalysis {
  long long high_wins = 0;  // higher-confidence view has higher quality
  long long low_wins = 0;
  long long ties = 0;       // equal confidence or equal quality score

  long long pairs() const { return high_wins + low_wins + ties; }
  double win_proportion() const {
    long long decided = high_wins + low_wins;
    return decided == 0 ? 0.0 : static_cast<double>(high_wins) / decided;
  }
};

/// Generates both collaborative views per anchor with the frozen module and
/// tallies whether the higher-confidence view scores higher on the
/// co-occurrence quality proxy. max_anchors 0 means all.
QualityAnalysis confidence_quality_analysis(const ModelParams& frozen_model,
                                            const AugmentParams& frozen_aug,
                                            const std::vector<SplitSequence>& splits,
                                            const TargetIndex& tidx, const SimilarityIndex& sidx,
                                            int k, uint64_t seed, const CoocTable& table,
                                            int max_anchors = 0);

}  // namespace qcmp
