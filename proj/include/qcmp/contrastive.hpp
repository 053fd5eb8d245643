#pragma once

#include <utility>
#include <vector>

#include "qcmp/autograd.hpp"
#include "qcmp/rng.hpp"

namespace qcmp {

/// Loss mixing weights and the quality-softmax temperature.
struct LossWeights {
  double alpha = 0.2;
  double beta = 0.05;
  double q_temp = 0.5;
  double sim_temp = 1.0;
  bool symmetric_cl = false;
};

/// softmax([q1, q2] / q_temp). The weights are constants downstream (no
/// gradient flows back into the quality scores).
std::pair<double, double> quality_weights(double q1, double q2, double q_temp);

/// Quality-weighted multi-positive InfoNCE. Anchors are rows of `anchor`;
/// the positives are the matching rows of v1 and v2 and the negatives are
/// the 2B-2 views of the other rows. Dot-product similarity, averaged over
/// anchors. Requires B >= 2.
ag::NR l_qmp(ag::Tape& tape, ag::NR anchor, ag::NR v1, ag::NR v2,
             const std::vector<std::pair<double, double>>& weights, double sim_temp = 1.0);

/// Same-source InfoNCE anchored at v1 with positive v2; negatives are the
/// other rows' views. One-directional unless `symmetric`.
ag::NR l_cl(ag::Tape& tape, ag::NR v1, ag::NR v2, double sim_temp = 1.0, bool symmetric = false);

/// l_rec + alpha * l_qmp + beta * l_cl.
double joint_loss(double l_rec, double l_qmp, double l_cl, const LossWeights& w);
ag::NR joint_loss(ag::Tape& tape, ag::NR rec, ag::NR qmp, ag::NR cl, const LossWeights& w);

enum class HeuristicOp { Crop, Mask, Reorder, Random };

/// Random augmentation used by the ablation variants: crop a contiguous
/// span, mask random items, or shuffle a contiguous span.
std::vector<int> heuristic_augment(const std::vector<int>& sequence, HeuristicOp op, double ratio,
                                   int mask_id, Rng& rng);

}  // namespace qcmp
