#include "qcmp/co_augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qcmp {

using ag::Mat;
using ag::NR;
using ag::Param;
using ag::Tape;
using ag::Vec;

std::vector<Param*> AugmentParams::all() {
  std::vector<Param*> out = {&op_w, &w_co, &u_co, &v_co, &gate_co, &gate_all};
  generator.collect(out);
  return out;
}

AugmentParams init_augment_params(const ModelConfig& cfg, uint64_t seed) {
  Rng rng = derive_rng(seed, {0x6175676dULL});
  int e = cfg.embed_dim;
  AugmentParams aug;
  auto xavier = [&rng](const char* name, int r, int c) {
    Param p(name, r, c);
    double limit = std::sqrt(6.0 / (r + c));
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
      for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
        p.value(i, j) = rng.uniform_real(-limit, limit);
      }
    }
    return p;
  };
  aug.op_w = xavier("aug.op_w", 3, e);
  aug.w_co = xavier("aug.w_co", e, e);
  aug.u_co = xavier("aug.u_co", e, e);
  aug.v_co = xavier("aug.v_co", e, 1);
  aug.gate_co = xavier("aug.gate_co", 2, e);
  aug.gate_all = xavier("aug.gate_all", 2, e);
  aug.generator.init("gen", e, cfg.num_layers, rng);
  return aug;
}

std::vector<int> apply_edit_plan(const std::vector<int>& corrupted, const EditPlan& plan) {
  if (plan.ops.size() != corrupted.size() + 1) {
    throw std::runtime_error("edit plan does not match the corrupted sequence");
  }
  std::vector<int> out;
  for (size_t t = 0; t <= corrupted.size(); ++t) {
    if (plan.ops[t] == EditOp::Insert) {
      const auto& ins = plan.inserts[t];
      out.insert(out.end(), ins.rbegin(), ins.rend());
    }
    if (t < corrupted.size() && plan.ops[t] != EditOp::Delete) out.push_back(corrupted[t]);
  }
  return out;
}

std::optional<Corruption> corrupt(const std::vector<int>& sequence, const NoiseRatio& ratio,
                                  int num_items, uint64_t seed, int max_insert, int max_len) {
  ratio.validate();
  if (sequence.empty()) throw std::runtime_error("corrupt: empty input sequence");

  for (int attempt = 0; attempt < 10; ++attempt) {
    Rng rng = derive_rng(seed, {0x636f7272ULL, static_cast<uint64_t>(attempt)});
    Corruption c;
    std::vector<int> pending;  // deleted originals awaiting the next kept item

    auto emit_kept = [&](int item) {
      if (pending.empty()) {
        c.plan.ops.push_back(EditOp::Keep);
        c.plan.inserts.emplace_back();
      } else {
        c.plan.ops.push_back(EditOp::Insert);
        c.plan.inserts.emplace_back(pending.rbegin(), pending.rend());
        pending.clear();
      }
      c.corrupted.push_back(item);
    };

    const int n = static_cast<int>(sequence.size());
    for (int i = 0; i < n; ++i) {
      double r = rng.uniform_real();
      bool room_for_noise = static_cast<int>(c.corrupted.size()) + (n - i) < max_len;
      if (r < ratio.keep) {
        emit_kept(sequence[i]);
      } else if (r < ratio.keep + ratio.del) {
        if (static_cast<int>(pending.size()) < max_insert) {
          pending.push_back(sequence[i]);
        } else {
          emit_kept(sequence[i]);  // deletion run hit the generator bound
        }
      } else {
        if (room_for_noise) {
          c.corrupted.push_back(rng.uniform_int(1, num_items + 1));
          c.plan.ops.push_back(EditOp::Delete);
          c.plan.inserts.emplace_back();
        }
        emit_kept(sequence[i]);
      }
    }
    // Trailing sentinel slot carries deletions at the tail.
    if (pending.empty()) {
      c.plan.ops.push_back(EditOp::Keep);
      c.plan.inserts.emplace_back();
    } else {
      c.plan.ops.push_back(EditOp::Insert);
      c.plan.inserts.emplace_back(pending.rbegin(), pending.rend());
    }
    if (!c.corrupted.empty()) return c;
  }
  return std::nullopt;
}

Vec context_occurrence(const std::vector<std::vector<int>>& contexts, int num_items) {
  Vec occ = Vec::Zero(num_items + 1);  // last column is the end token
  for (const auto& seq : contexts) {
    for (int item : seq) {
      if (item >= 1 && item <= num_items) occ(item - 1) += 1.0;
    }
  }
  return occ;
}

namespace {

std::vector<int> real_row_indices(const SequenceBatch& batch, std::vector<int>& offsets) {
  std::vector<int> idx;
  offsets.assign(1, 0);
  const int L = batch.len();
  for (int b = 0; b < batch.rows(); ++b) {
    int n = batch.lengths[b];
    for (int p = L - n; p < L; ++p) idx.push_back(b * L + p);
    offsets.push_back(static_cast<int>(idx.size()));
  }
  return idx;
}

}  // namespace

ContextNodes encode_contexts_on_tape(Tape& tape, const ModelParams& params,
                                     const std::vector<std::vector<int>>& contexts, bool train,
                                     Rng& drop_rng) {
  SequenceBatch batch = make_batch(contexts, params.cfg.max_raw_len);
  NR h = encode(tape, batch, params, train, drop_rng);
  ContextNodes ctx;
  std::vector<int> idx = real_row_indices(batch, ctx.offsets);
  ctx.stacked = tape.gather_rows(h, std::move(idx));
  ctx.pooled = tape.group_mean_rows(ctx.stacked, ctx.offsets);
  ctx.occ = context_occurrence(contexts, params.cfg.num_items);
  return ctx;
}

ContextEncodings encode_contexts(const ModelParams& params,
                                 const std::vector<std::vector<int>>& contexts) {
  Tape tape(/*grad_enabled=*/false);
  Rng rng(0);
  ContextNodes nodes = encode_contexts_on_tape(tape, params, contexts, /*train=*/false, rng);
  ContextEncodings enc;
  enc.stacked = tape.val(nodes.stacked);
  enc.offsets = nodes.offsets;
  enc.pooled = tape.val(nodes.pooled);
  enc.occ = nodes.occ;
  return enc;
}

Mat encode_with_sentinel(const ModelParams& params, const std::vector<int>& sequence) {
  std::vector<int> row = sequence;
  row.push_back(params.cfg.mask_id());
  SequenceBatch batch = make_batch({row}, params.cfg.max_aug_len + 1);
  Tape tape(/*grad_enabled=*/false);
  Rng rng(0);
  NR h = encode(tape, batch, params, /*train=*/false, rng);
  return tape.val(h);
}

ContextNodes to_nodes(Tape& tape, const ContextEncodings& enc) {
  ContextNodes ctx;
  ctx.stacked = tape.constant(enc.stacked);
  ctx.offsets = enc.offsets;
  ctx.pooled = tape.constant(enc.pooled);
  ctx.occ = enc.occ;
  return ctx;
}

NR joint_repr(Tape& tape, NR anchor_slots, const ContextNodes& ctx) {
  return tape.joint_context_attention(anchor_slots, ctx.stacked, ctx.offsets);
}

NR operation_logits(Tape& tape, NR h_joint, AugmentParams& aug) {
  return tape.matmul(h_joint, tape.param(aug.op_w), false, true);
}

NR insertion_support_embeddings(Tape& tape, const ModelParams& model) {
  auto& params = const_cast<ModelParams&>(model);
  std::vector<int> rows(model.cfg.num_items + 1);
  for (int i = 0; i < model.cfg.num_items; ++i) rows[i] = i + 1;
  rows[model.cfg.num_items] = model.cfg.eoi_id();
  return tape.gather_rows(tape.param(params.item_emb), std::move(rows));
}

NR insertion_generator_hiddens(Tape& tape, const ModelParams& model, AugmentParams& aug, NR h_t,
                               const std::vector<int>& prefix, bool train, Rng& drop_rng) {
  auto& params = const_cast<ModelParams&>(model);
  const int m = static_cast<int>(prefix.size());

  // Generator input: the anchor-slot representation, then the generated
  // items, each with its position embedding.
  std::vector<NR> parts = {h_t};
  if (m > 0) {
    std::vector<int> ids(prefix.begin(), prefix.end());
    parts.push_back(tape.gather_rows(tape.param(params.item_emb), std::move(ids)));
  }
  NR x = tape.concat_rows(parts);
  std::vector<int> pos_idx(m + 1);
  for (int i = 0; i <= m; ++i) pos_idx[i] = i;
  x = tape.add(x, tape.gather_rows(tape.param(params.pos_emb), std::move(pos_idx)));

  ag::BatchMeta meta{1, m + 1, model.cfg.num_heads, {m + 1}};
  return aug.generator.forward(tape, x, meta, model.cfg.dropout, drop_rng, train);
}

NR copy_mixture_probs(Tape& tape, const ModelParams& model, AugmentParams& aug, NR hc,
                      const ContextNodes& ctx, NR e_sub) {
  (void)model;
  NR logits = tape.matmul(hc, e_sub, false, true);  // rows x (num_items+1)
  NR p_all = tape.softmax_rows(logits);

  if (ctx.occ.sum() <= 0.0) return p_all;  // gate collapses to the full vocabulary

  // Copy attention over the pooled context representations.
  NR t1 = tape.matmul(ctx.pooled, tape.param(aug.w_co), false, true);
  NR t2 = tape.matmul(hc, tape.param(aug.u_co), false, true);
  NR scores = tape.additive_scores(t1, t2, tape.param(aug.v_co));
  NR attn = tape.softmax_rows(scores);
  NR c_vec = tape.matmul(attn, ctx.pooled);

  NR gate_logits = tape.add(tape.matmul(c_vec, tape.param(aug.gate_co), false, true),
                            tape.matmul(hc, tape.param(aug.gate_all), false, true));
  NR gate = tape.softmax_rows(gate_logits);
  Mat sel_co(2, 1), sel_all(2, 1);
  sel_co << 1, 0;
  sel_all << 0, 1;
  NR g_co = tape.matmul(gate, tape.constant(sel_co));
  NR g_all = tape.matmul(gate, tape.constant(sel_all));

  NR p_col = tape.weighted_softmax_rows(logits, ctx.occ);
  return tape.add(tape.scale_rows(p_col, g_co), tape.scale_rows(p_all, g_all));
}

NR insertion_step_probs(Tape& tape, const ModelParams& model, AugmentParams& aug, NR h_t,
                        const std::vector<int>& prefix, const ContextNodes& ctx, NR e_sub,
                        bool train, Rng& drop_rng) {
  NR hc = insertion_generator_hiddens(tape, model, aug, h_t, prefix, train, drop_rng);
  return copy_mixture_probs(tape, model, aug, hc, ctx, e_sub);
}

Vec insertion_step(const ModelParams& model, const AugmentParams& aug, const Mat& h_t,
                   const std::vector<int>& generated, const ContextEncodings& ctx) {
  Tape tape(/*grad_enabled=*/false);
  Rng rng(0);
  ContextNodes nodes = to_nodes(tape, ctx);
  NR e_sub = insertion_support_embeddings(tape, model);
  NR probs = insertion_step_probs(tape, model, const_cast<AugmentParams&>(aug),
                                  tape.constant(h_t), generated, nodes, e_sub,
                                  /*train=*/false, rng);
  return tape.val(probs).row(tape.val(probs).rows() - 1).transpose();
}

NR reconstruction_nll(Tape& tape, const ModelParams& model, AugmentParams& aug, NR anchor_slots,
                      const ContextNodes& ctx, const EditPlan& plan, NR e_sub, bool train,
                      Rng& drop_rng) {
  NR h_joint = joint_repr(tape, anchor_slots, ctx);
  NR op_l = operation_logits(tape, h_joint, aug);

  std::vector<int> labels(plan.ops.size());
  for (size_t t = 0; t < plan.ops.size(); ++t) labels[t] = static_cast<int>(plan.ops[t]);
  NR total = tape.cross_entropy_rows(op_l, std::move(labels));

  const int num_items = model.cfg.num_items;
  for (size_t t = 0; t < plan.ops.size(); ++t) {
    if (plan.ops[t] != EditOp::Insert) continue;
    const auto& list = plan.inserts[t];
    NR h_t = tape.gather_rows(h_joint, {static_cast<int>(t)});
    NR probs = insertion_step_probs(tape, model, aug, h_t, list, ctx, e_sub, train, drop_rng);
    std::vector<int> targets(list.size() + 1);
    for (size_t s = 0; s < list.size(); ++s) targets[s] = list[s] - 1;
    targets[list.size()] = num_items;  // end-of-insertion column
    total = tape.add(total, tape.nll_rows(probs, std::move(targets)));
  }
  return total;
}

namespace {

// keep > delete > insert on exact ties.
int argmax_op(const Eigen::RowVector3d& p) {
  int best = 0;
  for (int j = 1; j < 3; ++j) {
    if (p(j) > p(best)) best = j;
  }
  return best;
}

}  // namespace

AugmentedView generate_view(const ModelParams& frozen_model, const AugmentParams& frozen_aug,
                            const std::vector<int>& sequence, const Mat& anchor_slots,
                            const ContextEncodings& ctx, GenerateMode) {
  const int L = static_cast<int>(sequence.size());
  auto& aug = const_cast<AugmentParams&>(frozen_aug);

  Tape tape(/*grad_enabled=*/false);
  Rng rng(0);
  ContextNodes ctx_nodes = to_nodes(tape, ctx);
  NR slots = tape.constant(anchor_slots);
  NR h_joint = joint_repr(tape, slots, ctx_nodes);
  NR op_probs = tape.softmax_rows(operation_logits(tape, h_joint, aug));
  const Mat& p = tape.val(op_probs);  // (L+1) x 3

  NR e_sub = insertion_support_embeddings(tape, frozen_model);
  const int num_items = frozen_model.cfg.num_items;

  auto greedy_insert = [&](int slot) {
    std::vector<int> generated;
    NR h_t = tape.gather_rows(h_joint, {slot});
    for (int step = 0; step < frozen_model.cfg.max_insert; ++step) {
      NR probs = insertion_step_probs(tape, frozen_model, aug, h_t, generated, ctx_nodes, e_sub,
                                      /*train=*/false, rng);
      const Mat& pm = tape.val(probs);
      Eigen::Index row = pm.rows() - 1;
      Eigen::Index best = 0;
      pm.row(row).maxCoeff(&best);
      if (best == num_items) break;  // end token
      generated.push_back(static_cast<int>(best) + 1);
    }
    return generated;
  };

  AugmentedView view;
  view.op_conf.reserve(L);
  for (int t = 0; t <= L; ++t) {
    Eigen::RowVector3d row = p.row(t);
    int op = argmax_op(row);
    if (t < L) view.op_conf.push_back(row.maxCoeff());
    if (op == static_cast<int>(EditOp::Insert)) {
      std::vector<int> gen = greedy_insert(t);
      view.items.insert(view.items.end(), gen.rbegin(), gen.rend());
    }
    if (t < L && op != static_cast<int>(EditOp::Delete)) view.items.push_back(sequence[t]);
  }

  if (view.items.empty() && L > 0) {
    // Collapsed view: fall back to the unedited input. The executed
    // operation is now keep, so confidences are recomputed from the keep
    // probabilities, floored at 1/3 (the smallest possible confidence of
    // an executed three-way decision).
    view.items = sequence;
    for (int t = 0; t < L; ++t) {
      view.op_conf[t] = std::max(p(t, static_cast<int>(EditOp::Keep)), 1.0 / 3.0);
    }
  }

  if (static_cast<int>(view.items.size()) > frozen_model.cfg.max_aug_len) {
    view.items.erase(view.items.begin(), view.items.end() - frozen_model.cfg.max_aug_len);
  }

  if (view.op_conf.empty()) {
    view.quality = 1.0 / 3.0;
  } else {
    double sum = 0.0;
    for (double c : view.op_conf) sum += c;
    view.quality = sum / static_cast<double>(view.op_conf.size());
  }
  return view;
}

}  // namespace qcmp
