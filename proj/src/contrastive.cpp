#include "qcmp/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qcmp {

using ag::NR;
using ag::Tape;
using ag::Vec;

std::pair<double, double> quality_weights(double q1, double q2, double q_temp) {
  if (q_temp <= 0.0) throw std::runtime_error("q_temp must be positive");
  double a = q1 / q_temp, b = q2 / q_temp;
  double mx = std::max(a, b);
  double ea = std::exp(a - mx), eb = std::exp(b - mx);
  return {ea / (ea + eb), eb / (ea + eb)};
}

namespace {

NR stacked_sims(Tape& tape, NR lhs, NR v1, NR v2, double sim_temp) {
  NR views = tape.concat_rows({v1, v2});
  NR sims = tape.matmul(lhs, views, false, true);
  if (sim_temp != 1.0) sims = tape.scale(sims, 1.0 / sim_temp);
  return sims;
}

}  // namespace

NR l_qmp(Tape& tape, NR anchor, NR v1, NR v2,
         const std::vector<std::pair<double, double>>& weights, double sim_temp) {
  const int b = static_cast<int>(anchor->val().rows());
  if (b < 2) throw std::runtime_error("l_qmp requires a batch of at least 2 (no negatives)");
  NR sims = stacked_sims(tape, anchor, v1, v2, sim_temp);  // B x 2B

  std::vector<int> pos1(b), pos2(b), ex1(b), ex2(b);
  Vec w1(b), w2(b);
  for (int u = 0; u < b; ++u) {
    pos1[u] = u;
    ex1[u] = b + u;  // the other positive is neither positive nor negative here
    pos2[u] = b + u;
    ex2[u] = u;
    w1(u) = weights[u].first;
    w2(u) = weights[u].second;
  }
  NR term1 = tape.info_nce_rows(sims, std::move(pos1), std::move(ex1), std::move(w1));
  NR term2 = tape.info_nce_rows(sims, std::move(pos2), std::move(ex2), std::move(w2));
  return tape.scale(tape.add(term1, term2), 1.0 / b);
}

NR l_cl(Tape& tape, NR v1, NR v2, double sim_temp, bool symmetric) {
  const int b = static_cast<int>(v1->val().rows());
  if (b < 2) throw std::runtime_error("l_cl requires a batch of at least 2 (no negatives)");
  NR sims = stacked_sims(tape, v1, v2, v1, sim_temp);  // rows anchored at v1; cols [v2; v1]

  std::vector<int> pos(b), ex(b);
  for (int u = 0; u < b; ++u) {
    pos[u] = u;      // v2_u
    ex[u] = b + u;   // exclude the anchor itself (v1_u)
  }
  NR loss = tape.info_nce_rows(sims, std::move(pos), std::move(ex), Vec::Ones(b));
  if (symmetric) {
    NR sims2 = stacked_sims(tape, v2, v1, v2, sim_temp);
    std::vector<int> pos2(b), ex2(b);
    for (int u = 0; u < b; ++u) {
      pos2[u] = u;
      ex2[u] = b + u;
    }
    NR loss2 = tape.info_nce_rows(sims2, std::move(pos2), std::move(ex2), Vec::Ones(b));
    loss = tape.scale(tape.add(loss, loss2), 0.5);
  }
  return tape.scale(loss, 1.0 / b);
}

double joint_loss(double l_rec, double l_qmp, double l_cl, const LossWeights& w) {
  return l_rec + w.alpha * l_qmp + w.beta * l_cl;
}

NR joint_loss(Tape& tape, NR rec, NR qmp, NR cl, const LossWeights& w) {
  NR out = rec;
  if (qmp != nullptr && w.alpha != 0.0) out = tape.add(out, tape.scale(qmp, w.alpha));
  if (cl != nullptr && w.beta != 0.0) out = tape.add(out, tape.scale(cl, w.beta));
  return out;
}

std::vector<int> heuristic_augment(const std::vector<int>& sequence, HeuristicOp op, double ratio,
                                   int mask_id, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::runtime_error("heuristic ratio must be in (0,1)");
  const int n = static_cast<int>(sequence.size());
  if (n <= 1) return sequence;

  if (op == HeuristicOp::Random) {
    op = static_cast<HeuristicOp>(rng.uniform_int(0, 3));
  }
  std::vector<int> out = sequence;
  switch (op) {
    case HeuristicOp::Crop: {
      int span = std::min(n, static_cast<int>(std::ceil(ratio * n)));
      span = std::max(span, 1);
      int start = rng.uniform_int(0, n - span + 1);
      return std::vector<int>(sequence.begin() + start, sequence.begin() + start + span);
    }
    case HeuristicOp::Mask: {
      int count = static_cast<int>(std::floor(ratio * n));
      std::vector<int> idx(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      shuffle(idx, rng);
      for (int i = 0; i < count; ++i) out[idx[i]] = mask_id;
      return out;
    }
    case HeuristicOp::Reorder: {
      int span = static_cast<int>(std::floor(ratio * n));
      if (span < 2) return out;
      int start = rng.uniform_int(0, n - span + 1);
      for (int i = span; i > 1; --i) {
        int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(i)));
        std::swap(out[start + i - 1], out[start + j]);
      }
      return out;
    }
    default:
      return out;
  }
}

}  // namespace qcmp
