#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qcmp/rng.hpp"

namespace qcmp::ag {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// A named trainable tensor with its gradient and optimizer moments.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;  // Adam first moment
  Mat v;  // Adam second moment

  Param() = default;
  Param(std::string n, int rows, int cols) : name(std::move(n)) {
    value = Mat::Zero(rows, cols);
    reset_state();
  }
  void reset_state() {
    grad = Mat::Zero(value.rows(), value.cols());
    m = Mat::Zero(value.rows(), value.cols());
    v = Mat::Zero(value.rows(), value.cols());
  }
};

struct Node;
using NR = Node*;

struct Node {
  Mat storage;
  const Mat* value = nullptr;  // points at storage, or at an external Param
  Mat grad;
  std::function<void()> backward;
  bool needs_grad = false;

  const Mat& val() const { return *value; }
  void ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(value->rows(), value->cols());
  }
  void add_grad(const Mat& g) {
    ensure_grad();
    grad += g;
  }
};

/// Batch layout for fused attention over left-padded sequences: row
/// b*len + p of a (batch*len) x e matrix is position p of sequence b.
struct BatchMeta {
  int batch = 0;
  int len = 0;
  int heads = 1;
  std::vector<int> lengths;  // true length per sequence (<= len)
};

/// Reverse-mode tape over Eigen matrices. Graphs are built per step and
/// discarded; parameters persist outside the tape. Construction order is a
/// topological order, so backward() just walks the node list in reverse.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

  NR param(Param& p);
  NR constant(Mat m);

  const Mat& val(NR n) const { return n->val(); }

  /// Seeds the 1x1 loss node with gradient 1 and accumulates parameter
  /// gradients (into Param::grad, additively).
  void backward(NR loss);

  // ----- elementwise / linear algebra -----
  NR add(NR a, NR b);
  NR sub(NR a, NR b);
  NR scale(NR a, double s);
  NR hadamard(NR a, NR b);
  NR matmul(NR a, NR b, bool trans_a = false, bool trans_b = false);
  NR add_rowvec(NR a, NR row);            // broadcast a 1 x n row over all rows
  NR scale_rows(NR a, NR s);              // row i scaled by s(i, 0)
  NR relu(NR a);
  NR tanh_(NR a);
  NR dropout(NR a, double p, Rng& rng, bool train);

  // ----- shape ops -----
  NR gather_rows(NR a, std::vector<int> idx);  // idx -1 yields a zero row
  NR concat_rows(const std::vector<NR>& parts);
  NR group_mean_rows(NR a, std::vector<int> offsets);  // rows [off[k],off[k+1]) -> mean

  // ----- normalization / softmax -----
  NR layer_norm(NR a, NR gamma, NR beta, double eps = 1e-5);
  NR softmax_rows(NR a);
  NR weighted_softmax_rows(NR a, Vec weights);  // p_ij ∝ w_j exp(a_ij)

  // ----- fused attention -----
  /// Multi-head causal self-attention over a left-padded batch; padding
  /// positions are excluded as keys and produce zero output rows.
  NR causal_self_attention(NR q, NR k, NR v, const BatchMeta& meta, double attn_dropout,
                           Rng& rng, bool train);

  /// out = anchor + (sum_k softmax(anchor * ctx_k^T) * ctx_k) / K, where
  /// ctx_k is rows [offsets[k], offsets[k+1]) of ctx.
  NR joint_context_attention(NR anchor, NR ctx, std::vector<int> offsets);

  /// scores(i, k) = v^T tanh(a.row(k) + b.row(i)); used by the copy
  /// attention over pooled context representations.
  NR additive_scores(NR a, NR b, NR v);

  // ----- losses (all produce 1x1 sums; callers scale) -----
  /// sum_r -log softmax(logits.row(r))[targets[r]]; targets < 0 are skipped.
  NR cross_entropy_rows(NR logits, std::vector<int> targets);
  /// sum_r -log probs(r, targets[r]); targets < 0 are skipped.
  NR nll_rows(NR probs, std::vector<int> targets);
  /// sum_r -w_r * log( exp(S[r,pos_r]) / sum_{c != excl_r} exp(S[r,c]) ).
  NR info_nce_rows(NR sims, std::vector<int> pos, std::vector<int> excluded, Vec weights);

 private:
  NR make(Mat storage, bool needs, std::function<void()> back);
  NR make_like(const Mat* external, bool needs, std::function<void()> back);

  bool grad_enabled_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace qcmp::ag
