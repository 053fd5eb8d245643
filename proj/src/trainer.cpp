#include "qcmp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>

namespace qcmp {

using ag::Mat;
using ag::NR;
using ag::Param;
using ag::Tape;

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::Full;
  if (name == "wo_lcl") return Variant::WoLcl;
  if (name == "wo_qa") return Variant::WoQa;
  if (name == "w_col1") return Variant::WCol1;
  if (name == "w_col2") return Variant::WCol2;
  if (name == "heuristic") return Variant::Heuristic;
  if (name == "vanilla") return Variant::Vanilla;
  throw std::runtime_error("unknown variant: '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::WoLcl: return "wo_lcl";
    case Variant::WoQa: return "wo_qa";
    case Variant::WCol1: return "w_col1";
    case Variant::WCol2: return "w_col2";
    case Variant::Heuristic: return "heuristic";
    case Variant::Vanilla: return "vanilla";
  }
  return "full";
}

TrainConfig TrainConfig::from_config(const Config& cfg, int num_items) {
  TrainConfig tc;
  tc.model.num_items = num_items;
  tc.model.embed_dim = cfg.get_int("embed_dim");
  tc.model.num_heads = cfg.get_int("num_heads");
  tc.model.num_layers = cfg.get_int("num_layers");
  tc.model.dropout = cfg.get_real("dropout");
  tc.model.max_raw_len = cfg.get_int("max_raw_len");
  tc.model.max_aug_len = cfg.get_int("max_aug_len");
  tc.model.max_insert = cfg.get_int("max_insert");
  tc.learning_rate = cfg.get_real("learning_rate");
  tc.batch_size = cfg.get_int("batch_size");
  tc.stage1_k = cfg.get_int("stage1_K");
  tc.stage2_k = cfg.get_int("stage2_K");
  tc.stage1_epochs = cfg.get_int("stage1_epochs");
  tc.stage2_epochs = cfg.get_int("stage2_epochs");
  tc.patience = cfg.get_int("patience");
  tc.grad_clip = cfg.get_real("grad_clip");
  tc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  tc.variant = parse_variant(cfg.get_str("variant"));
  tc.corrupt_ratio = {cfg.get_real("corrupt_keep"), cfg.get_real("corrupt_delete"),
                      cfg.get_real("corrupt_insert")};
  tc.stage1_valid_frac = cfg.get_real("stage1_valid_frac");
  tc.init_encoder_from_stage1 = cfg.get_bool("init_encoder_from_stage1");
  tc.cache_frozen_encodings = cfg.get_bool("cache_frozen_encodings");
  tc.loss.alpha = cfg.get_real("alpha");
  tc.loss.beta = cfg.get_real("beta");
  tc.loss.q_temp = cfg.get_real("q_temp");
  tc.loss.sim_temp = cfg.get_real("sim_temp");
  tc.loss.symmetric_cl = cfg.get_bool("symmetric_cl");
  tc.heuristic_ratio = cfg.get_real("heuristic_ratio");
  return tc;
}

namespace {

std::vector<Param*> stage1_trainable(Stage1State& s) {
  // Embeddings, encoder, and the augmentation heads; the decoder is not in
  // the reconstruction path.
  std::vector<Param*> out = {&s.model.item_emb, &s.model.pos_emb};
  s.model.encoder.collect(out);
  for (Param* p : s.aug.all()) out.push_back(p);
  return out;
}

std::vector<Param*> stage1_all(Stage1State& s) {
  std::vector<Param*> out = s.model.all();
  for (Param* p : s.aug.all()) out.push_back(p);
  return out;
}

void capture_with_prefix(Checkpoint& ck, const std::vector<Param*>& params,
                         const std::string& prefix) {
  for (const Param* p : params) {
    ck.tensors.push_back({prefix + p->name, p->value, p->m, p->v});
  }
}

bool restore_with_prefix(const Checkpoint& ck, const std::vector<Param*>& params,
                         const std::string& prefix, bool required) {
  std::unordered_map<std::string, const Checkpoint::Tensor*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  for (Param* p : params) {
    auto it = by_name.find(prefix + p->name);
    if (it == by_name.end()) {
      if (required) throw std::runtime_error("checkpoint is missing tensor '" + prefix + p->name + "'");
      return false;
    }
    if (it->second->value.rows() != p->value.rows() ||
        it->second->value.cols() != p->value.cols()) {
      throw std::runtime_error("checkpoint tensor '" + prefix + p->name + "' shape mismatch");
    }
    p->value = it->second->value;
    p->m = it->second->m;
    p->v = it->second->v;
    p->grad.setZero();
  }
  return true;
}

void log_line(std::ostream* log, const std::string& line) {
  if (log) (*log) << line << '\n' << std::flush;
}

// Model input for the next-item head: the prediction prefix with the mask
// token appended.
std::vector<int> rec_row(const std::vector<int>& prefix, const ModelConfig& cfg) {
  std::vector<int> row = prefix;
  if (static_cast<int>(row.size()) > cfg.max_raw_len) {
    row.erase(row.begin(), row.end() - cfg.max_raw_len);
  }
  row.push_back(cfg.mask_id());
  return row;
}

struct Stage1Validation {
  double loss = 0.0;
  double op_accuracy = 0.0;
  double insert_recall5 = 0.0;
};

Stage1Validation stage1_validate(Stage1State& state, const std::vector<SplitSequence>& splits,
                                 const std::vector<int>& valid_idx, const TargetIndex& tidx,
                                 const SimilarityIndex& sidx, const TrainConfig& cfg) {
  Stage1Validation out;
  long long op_total = 0, op_correct = 0, ins_total = 0, ins_hit = 0;
  double loss_sum = 0.0;
  long long n = 0;
  Rng no_drop(0);

  for (int idx : valid_idx) {
    const SplitSequence& s = splits[idx];
    auto cr = corrupt(s.train_items, cfg.corrupt_ratio, cfg.model.num_items,
                      derive_rng(cfg.seed, {0x7631, static_cast<uint64_t>(s.user)}).next_u64(),
                      cfg.model.max_insert, cfg.model.max_aug_len);
    if (!cr) continue;
    CollabContext ctx = sample_collab(splits, idx, tidx, sidx, CollabCondition::SameTarget,
                                      cfg.stage1_k, hash_combine(cfg.seed, 0x7632));

    Tape tape(/*grad_enabled=*/false);
    std::vector<int> row = cr->corrupted;
    row.push_back(cfg.model.mask_id());
    SequenceBatch batch = make_batch({row}, cfg.model.max_aug_len + 1);
    NR h = encode(tape, batch, state.model, /*train=*/false, no_drop);
    ContextNodes cn = encode_contexts_on_tape(tape, state.model, ctx.sequences, false, no_drop);
    NR e_sub = insertion_support_embeddings(tape, state.model);

    NR h_joint = joint_repr(tape, h, cn);
    NR op_l = operation_logits(tape, h_joint, state.aug);
    const Mat& logits = tape.val(op_l);
    double seq_loss = 0.0;
    for (size_t t = 0; t < cr->plan.ops.size(); ++t) {
      Eigen::Index best = 0;
      logits.row(static_cast<Eigen::Index>(t)).maxCoeff(&best);
      op_correct += best == static_cast<Eigen::Index>(cr->plan.ops[t]) ? 1 : 0;
      ++op_total;
    }
    NR nll = reconstruction_nll(tape, state.model, state.aug, h, cn, cr->plan, e_sub, false,
                                no_drop);
    seq_loss = tape.val(nll)(0, 0);

    // Teacher-forced top-5 recall over insertion steps (end token included).
    for (size_t t = 0; t < cr->plan.ops.size(); ++t) {
      if (cr->plan.ops[t] != EditOp::Insert) continue;
      const auto& list = cr->plan.inserts[t];
      NR h_t = tape.gather_rows(h_joint, {static_cast<int>(t)});
      NR probs = insertion_step_probs(tape, state.model, state.aug, h_t, list, cn, e_sub, false,
                                      no_drop);
      const Mat& pm = tape.val(probs);
      for (size_t step = 0; step <= list.size(); ++step) {
        int target = step < list.size() ? list[step] - 1 : cfg.model.num_items;
        double pt = pm(static_cast<Eigen::Index>(step), target);
        int above = 0;
        for (Eigen::Index c = 0; c < pm.cols(); ++c) {
          if (pm(static_cast<Eigen::Index>(step), c) > pt) ++above;
        }
        ins_hit += above < 5 ? 1 : 0;
        ++ins_total;
      }
    }
    loss_sum += seq_loss;
    ++n;
  }
  out.loss = n > 0 ? loss_sum / n : 0.0;
  out.op_accuracy = op_total > 0 ? static_cast<double>(op_correct) / op_total : 0.0;
  out.insert_recall5 = ins_total > 0 ? static_cast<double>(ins_hit) / ins_total : 0.0;
  return out;
}

Checkpoint make_stage1_checkpoint(Stage1State& state, const TrainConfig& cfg,
                                  const std::string& config_text, int epoch, double best_metric,
                                  long long adam_t) {
  Checkpoint ck;
  ck.stage = "stage1";
  ck.config_text = config_text;
  ck.epoch = epoch;
  ck.rng_state = hash_combine(cfg.seed, static_cast<uint64_t>(epoch));
  ck.adam_t = adam_t;
  ck.best_metric = best_metric;
  ck.capture(stage1_all(state));
  return ck;
}

}  // namespace

Stage1State stage1_from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg) {
  Stage1State s{init_params(cfg.model, cfg.seed), init_augment_params(cfg.model, cfg.seed)};
  restore_with_prefix(ck, stage1_all(s), "", /*required=*/true);
  return s;
}

ModelParams model_from_checkpoint(const Checkpoint& ck, const ModelConfig& cfg) {
  ModelParams p = init_params(cfg, 0);
  restore_with_prefix(ck, p.all(), "", /*required=*/true);
  return p;
}

bool frozen_from_checkpoint(const Checkpoint& ck, const ModelConfig& cfg, ModelParams& model,
                            AugmentParams& aug) {
  ModelParams m = init_params(cfg, 0);
  AugmentParams a = init_augment_params(cfg, 0);
  std::vector<Param*> params = m.all();
  for (Param* p : a.all()) params.push_back(p);
  if (!restore_with_prefix(ck, params, "frozen.", /*required=*/false)) return false;
  model = std::move(m);
  aug = std::move(a);
  return true;
}

Stage1Result pretrain_stage1(const std::vector<SplitSequence>& splits, const TargetIndex& tidx,
                             const SimilarityIndex& sidx, const TrainConfig& cfg,
                             const std::string& config_text, const std::string& out_dir,
                             std::ostream* log, const Checkpoint* resume) {
  Stage1State state{init_params(cfg.model, cfg.seed), init_augment_params(cfg.model, cfg.seed)};
  Adam opt;
  opt.lr = cfg.learning_rate;
  opt.clip_norm = cfg.grad_clip;
  int start_epoch = 0;
  double best_valid = std::numeric_limits<double>::infinity();
  if (resume) {
    restore_with_prefix(*resume, stage1_all(state), "", /*required=*/true);
    opt.t = resume->adam_t;
    start_epoch = static_cast<int>(resume->epoch) + 1;
    best_valid = resume->best_metric;
  }

  // Held-out sequences for validation-loss checkpoint selection.
  std::vector<int> order(splits.size());
  std::iota(order.begin(), order.end(), 0);
  {
    Rng r = derive_rng(cfg.seed, {0x7376616cULL});
    shuffle(order, r);
  }
  int n_valid = cfg.stage1_valid_frac > 0.0
                    ? std::max(1, static_cast<int>(cfg.stage1_valid_frac * splits.size()))
                    : 0;
  n_valid = std::min<int>(n_valid, static_cast<int>(splits.size()) - 1);
  std::vector<int> valid_idx(order.begin(), order.begin() + n_valid);
  std::vector<int> train_idx(order.begin() + n_valid, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(valid_idx.begin(), valid_idx.end());

  std::vector<Param*> trainable = stage1_trainable(state);
  Stage1Result result;
  log_line(log, "# stage1\tepoch\ttrain_recon\tvalid_recon\tvalid_op_acc\tvalid_ins_recall5");

  for (int epoch = start_epoch; epoch < cfg.stage1_epochs; ++epoch) {
    CollabCondition cond =
        epoch % 2 == 0 ? CollabCondition::SameTarget : CollabCondition::Similar;
    uint64_t epoch_seed = hash_combine(cfg.seed, static_cast<uint64_t>(epoch));

    std::vector<int> sched = train_idx;
    {
      Rng r = derive_rng(cfg.seed, {0x73686678ULL, static_cast<uint64_t>(epoch)});
      shuffle(sched, r);
    }

    double loss_sum = 0.0;
    long long n_seq = 0;
    for (size_t at = 0; at < sched.size(); at += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(sched.size(), at + static_cast<size_t>(cfg.batch_size));

      struct Item {
        int idx;
        Corruption cr;
        CollabContext ctx;
      };
      std::vector<Item> items;
      for (size_t i = at; i < end; ++i) {
        int idx = sched[i];
        const SplitSequence& s = splits[idx];
        uint64_t cseed = derive_rng(cfg.seed, {0xc0c0ULL, static_cast<uint64_t>(epoch),
                                               static_cast<uint64_t>(s.user)})
                             .next_u64();
        auto cr = corrupt(s.train_items, cfg.corrupt_ratio, cfg.model.num_items, cseed,
                          cfg.model.max_insert, cfg.model.max_aug_len);
        if (!cr) continue;  // corrupted to empty ten times; skip this sequence
        CollabContext ctx = sample_collab(splits, idx, tidx, sidx, cond, cfg.stage1_k, epoch_seed);
        items.push_back({idx, std::move(*cr), std::move(ctx)});
      }
      if (items.empty()) continue;

      Tape tape;
      Rng drop_rng = derive_rng(cfg.seed, {0x64726f70ULL, static_cast<uint64_t>(epoch),
                                           static_cast<uint64_t>(at)});
      std::vector<std::vector<int>> rows;
      rows.reserve(items.size());
      for (const auto& it : items) {
        std::vector<int> row = it.cr.corrupted;
        row.push_back(cfg.model.mask_id());
        rows.push_back(std::move(row));
      }
      SequenceBatch batch = make_batch(rows, cfg.model.max_aug_len + 1);
      NR h = encode(tape, batch, state.model, /*train=*/true, drop_rng);
      NR e_sub = insertion_support_embeddings(tape, state.model);

      NR total = nullptr;
      const int L = batch.len();
      for (size_t i = 0; i < items.size(); ++i) {
        int n = batch.lengths[i];
        std::vector<int> slot_rows(n);
        for (int p = 0; p < n; ++p) slot_rows[p] = static_cast<int>(i) * L + (L - n + p);
        NR slots = tape.gather_rows(h, std::move(slot_rows));
        ContextNodes cn =
            encode_contexts_on_tape(tape, state.model, items[i].ctx.sequences, true, drop_rng);
        NR nll = reconstruction_nll(tape, state.model, state.aug, slots, cn, items[i].cr.plan,
                                    e_sub, true, drop_rng);
        total = total == nullptr ? nll : tape.add(total, nll);
      }
      NR loss = tape.scale(total, 1.0 / static_cast<double>(items.size()));
      double lv = tape.val(loss)(0, 0);
      if (!std::isfinite(lv)) {
        throw TrainingDivergence("stage-one loss is not finite at epoch " +
                                 std::to_string(epoch));
      }
      loss_sum += lv * static_cast<double>(items.size());
      n_seq += static_cast<long long>(items.size());
      result.step_losses.push_back(lv);
      tape.backward(loss);
      opt.step(trainable);
    }

    double train_loss = n_seq > 0 ? loss_sum / n_seq : 0.0;
    result.train_losses.push_back(train_loss);
    Stage1Validation val = stage1_validate(state, splits, valid_idx, tidx, sidx, cfg);

    char buf[256];
    std::snprintf(buf, sizeof(buf), "stage1\t%d\t%.6f\t%.6f\t%.6f\t%.6f", epoch, train_loss,
                  val.loss, val.op_accuracy, val.insert_recall5);
    log_line(log, buf);

    bool improved = val.loss < best_valid;
    if (improved) best_valid = val.loss;
    Checkpoint ck = make_stage1_checkpoint(state, cfg, config_text, epoch, best_valid, opt.t);
    if (improved || result.best.tensors.empty()) {
      result.best = ck;
      result.best_valid_loss = val.loss;
      result.valid_op_accuracy = val.op_accuracy;
      result.valid_insert_recall5 = val.insert_recall5;
      if (!out_dir.empty()) ck.save(out_dir + "/stage1_best.ckpt");
    }
    if (!out_dir.empty()) ck.save(out_dir + "/stage1_last.ckpt");
  }
  return result;
}

namespace {

struct FrozenCaches {
  std::vector<Mat> anchor_slots;  // encoder output over input+sentinel
  std::vector<Mat> ctx_enc;       // encoder output over train_items (compact)
  std::vector<Eigen::RowVectorXd> ctx_pool;
};

FrozenCaches build_frozen_caches(const ModelParams& frozen, const std::vector<SplitSequence>& splits) {
  FrozenCaches caches;
  const size_t n = splits.size();
  caches.anchor_slots.resize(n);
  caches.ctx_enc.resize(n);
  caches.ctx_pool.resize(n);
  Rng no_drop(0);
  const int chunk = 256;
  for (size_t at = 0; at < n; at += chunk) {
    size_t end = std::min(n, at + chunk);
    // Context encodings over full train_items.
    std::vector<std::vector<int>> rows;
    for (size_t i = at; i < end; ++i) rows.push_back(splits[i].train_items);
    Tape tape(/*grad_enabled=*/false);
    SequenceBatch batch = make_batch(rows, frozen.cfg.max_raw_len);
    NR h = encode(tape, batch, frozen, false, no_drop);
    const Mat& hv = tape.val(h);
    const int L = batch.len();
    for (size_t i = at; i < end; ++i) {
      int len = batch.lengths[i - at];
      caches.ctx_enc[i] = hv.middleRows(static_cast<Eigen::Index>(i - at) * L + (L - len), len);
      caches.ctx_pool[i] = caches.ctx_enc[i].colwise().mean();
    }
    // Anchor slots over input+sentinel.
    std::vector<std::vector<int>> arow;
    for (size_t i = at; i < end; ++i) {
      std::vector<int> r = splits[i].input_items();
      r.push_back(frozen.cfg.mask_id());
      arow.push_back(std::move(r));
    }
    Tape tape2(/*grad_enabled=*/false);
    SequenceBatch abatch = make_batch(arow, frozen.cfg.max_aug_len + 1);
    NR ha = encode(tape2, abatch, frozen, false, no_drop);
    const Mat& hav = tape2.val(ha);
    const int La = abatch.len();
    for (size_t i = at; i < end; ++i) {
      int len = abatch.lengths[i - at];
      caches.anchor_slots[i] =
          hav.middleRows(static_cast<Eigen::Index>(i - at) * La + (La - len), len);
    }
  }
  return caches;
}

ContextEncodings assemble_context(const CollabContext& ctx, const FrozenCaches& caches,
                                  int num_items) {
  ContextEncodings enc;
  enc.offsets.assign(1, 0);
  Eigen::Index total = 0;
  for (int v : ctx.members) total += caches.ctx_enc[v].rows();
  Eigen::Index cols = total > 0 ? caches.ctx_enc[ctx.members[0]].cols() : 0;
  enc.stacked.resize(total, cols);
  enc.pooled.resize(static_cast<Eigen::Index>(ctx.members.size()), cols);
  Eigen::Index at = 0;
  for (size_t k = 0; k < ctx.members.size(); ++k) {
    const Mat& m = caches.ctx_enc[ctx.members[k]];
    enc.stacked.middleRows(at, m.rows()) = m;
    at += m.rows();
    enc.offsets.push_back(static_cast<int>(at));
    enc.pooled.row(static_cast<Eigen::Index>(k)) = caches.ctx_pool[ctx.members[k]];
  }
  enc.occ = context_occurrence(ctx.sequences, num_items);
  return enc;
}

Checkpoint make_stage2_checkpoint(ModelParams& rec, Stage1State* frozen, const TrainConfig& cfg,
                                  const std::string& config_text, int epoch, double best_metric,
                                  long long adam_t) {
  Checkpoint ck;
  ck.stage = "stage2";
  ck.config_text = config_text;
  ck.epoch = epoch;
  ck.rng_state = hash_combine(cfg.seed, static_cast<uint64_t>(epoch));
  ck.adam_t = adam_t;
  ck.best_metric = best_metric;
  ck.capture(rec.all());
  if (frozen != nullptr) {
    capture_with_prefix(ck, stage1_all(*frozen), "frozen.");
  }
  return ck;
}

}  // namespace

Stage2Result train_stage2(const std::vector<SplitSequence>& splits, const TargetIndex& tidx,
                          const SimilarityIndex& sidx, const TrainConfig& cfg,
                          const Checkpoint* stage1, const std::string& config_text,
                          const std::string& out_dir, std::ostream* log,
                          const Checkpoint* resume) {
  const Variant variant = cfg.variant;
  const bool needs_augmenter = variant == Variant::Full || variant == Variant::WoLcl ||
                               variant == Variant::WoQa || variant == Variant::WCol1 ||
                               variant == Variant::WCol2;
  if (needs_augmenter && stage1 == nullptr) {
    throw std::runtime_error("variant '" + variant_name(variant) +
                             "' requires a stage-one checkpoint");
  }

  // Recommender parameters, optionally warm-started from stage one.
  ModelParams rec = init_params(cfg.model, cfg.seed);
  if (stage1 != nullptr && cfg.init_encoder_from_stage1) {
    restore_with_prefix(*stage1, rec.all(), "", /*required=*/true);
    for (Param* p : rec.all()) {
      p->m.setZero();
      p->v.setZero();
    }
  }

  std::optional<Stage1State> frozen;
  if (stage1 != nullptr) frozen.emplace(stage1_from_checkpoint(*stage1, cfg));

  Adam opt;
  opt.lr = cfg.learning_rate;
  opt.clip_norm = cfg.grad_clip;
  int start_epoch = 0;
  double best_ndcg = -1.0;
  int since_best = 0;
  if (resume != nullptr) {
    restore_with_prefix(*resume, rec.all(), "", /*required=*/true);
    opt.t = resume->adam_t;
    start_epoch = static_cast<int>(resume->epoch) + 1;
    best_ndcg = resume->best_metric;
  }

  FrozenCaches caches;
  if (needs_augmenter && cfg.cache_frozen_encodings) {
    caches = build_frozen_caches(frozen->model, splits);
  }

  const double alpha = variant == Variant::Vanilla ? 0.0 : cfg.loss.alpha;
  const double beta =
      variant == Variant::Vanilla || variant == Variant::WoLcl ? 0.0 : cfg.loss.beta;
  const bool collab_v1 = needs_augmenter && variant != Variant::WCol2;
  const bool collab_v2 = needs_augmenter && variant != Variant::WCol1;
  const bool quality_weighted = variant == Variant::Full || variant == Variant::WoLcl;
  const bool build_views = variant != Variant::Vanilla && alpha + beta > 0.0;

  std::vector<Param*> trainable = rec.all();
  Stage2Result result;
  log_line(log, "# stage2\tepoch\tl_joint\tl_rec\tl_qmp\tl_cl\tvalid_ndcg10");

  LossWeights lw = cfg.loss;
  lw.alpha = alpha;
  lw.beta = beta;

  auto frozen_anchor_slots = [&](int idx, const std::vector<int>& input) {
    if (cfg.cache_frozen_encodings) return caches.anchor_slots[idx];
    return encode_with_sentinel(frozen->model, input);
  };
  auto frozen_context = [&](int idx, const CollabContext& ctx) {
    if (cfg.cache_frozen_encodings) return assemble_context(ctx, caches, cfg.model.num_items);
    (void)idx;
    return encode_contexts(frozen->model, ctx.sequences);
  };

  int epoch = start_epoch;
  for (; epoch < cfg.stage2_epochs; ++epoch) {
    uint64_t epoch_seed = hash_combine(cfg.seed, 0x5ull + static_cast<uint64_t>(epoch));
    std::vector<int> sched(splits.size());
    std::iota(sched.begin(), sched.end(), 0);
    {
      Rng r = derive_rng(cfg.seed, {0x73327368ULL, static_cast<uint64_t>(epoch)});
      shuffle(sched, r);
    }

    double sum_joint = 0, sum_rec = 0, sum_qmp = 0, sum_cl = 0;
    long long n_batches = 0;

    for (size_t at = 0; at < sched.size(); at += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(sched.size(), at + static_cast<size_t>(cfg.batch_size));
      size_t bsz = end - at;

      std::vector<std::vector<int>> rec_rows(bsz);
      std::vector<int> targets(bsz);
      std::vector<std::vector<int>> v1_items, v2_items;
      std::vector<std::pair<double, double>> weights;
      std::vector<int> contrast_rows;  // rows with a usable anchor and views

      for (size_t i = 0; i < bsz; ++i) {
        int idx = sched[at + i];
        const SplitSequence& s = splits[idx];
        std::vector<int> input = s.input_items();
        rec_rows[i] = rec_row(input, cfg.model);
        targets[i] = s.target();
        if (!build_views || input.empty()) continue;

        double q1 = 0.0, q2 = 0.0;
        std::vector<int> items1, items2;
        Mat slots;
        if (collab_v1 || collab_v2) slots = frozen_anchor_slots(idx, input);
        if (collab_v1) {
          CollabContext c =
              sample_collab(splits, idx, tidx, sidx, CollabCondition::SameTarget, cfg.stage2_k,
                            epoch_seed);
          AugmentedView v = generate_view(frozen->model, frozen->aug, input, slots,
                                          frozen_context(idx, c));
          items1 = std::move(v.items);
          q1 = v.quality;
        } else {
          Rng hr = derive_rng(cfg.seed, {0x6831ULL, static_cast<uint64_t>(epoch),
                                         static_cast<uint64_t>(s.user)});
          items1 = heuristic_augment(input, HeuristicOp::Random, cfg.heuristic_ratio,
                                     cfg.model.mask_id(), hr);
        }
        if (collab_v2) {
          CollabContext c = sample_collab(splits, idx, tidx, sidx, CollabCondition::Similar,
                                          cfg.stage2_k, epoch_seed);
          AugmentedView v = generate_view(frozen->model, frozen->aug, input, slots,
                                          frozen_context(idx, c));
          items2 = std::move(v.items);
          q2 = v.quality;
        } else {
          Rng hr = derive_rng(cfg.seed, {0x6832ULL, static_cast<uint64_t>(epoch),
                                         static_cast<uint64_t>(s.user)});
          items2 = heuristic_augment(input, HeuristicOp::Random, cfg.heuristic_ratio,
                                     cfg.model.mask_id(), hr);
        }
        if (items1.empty() || items2.empty()) continue;

        std::pair<double, double> w =
            quality_weighted && collab_v1 && collab_v2 ? quality_weights(q1, q2, cfg.loss.q_temp)
                                                       : std::make_pair(0.5, 0.5);
        contrast_rows.push_back(static_cast<int>(i));
        v1_items.push_back(std::move(items1));
        v2_items.push_back(std::move(items2));
        weights.push_back(w);
      }

      Tape tape;
      Rng drop_rng = derive_rng(cfg.seed, {0x64327270ULL, static_cast<uint64_t>(epoch),
                                           static_cast<uint64_t>(at)});
      SequenceBatch batch = make_batch(rec_rows, cfg.model.max_raw_len + 1);
      NR h_enc = encode(tape, batch, rec, /*train=*/true, drop_rng);
      NR logits = decode_logits(tape, h_enc, batch, rec, /*train=*/true, drop_rng);
      NR rec_l = rec_loss(tape, logits, targets);

      NR qmp = nullptr, cl = nullptr;
      if (contrast_rows.size() >= 2) {
        NR anchor_all = sequence_repr(tape, h_enc, batch, /*offset=*/1);
        NR anchor = tape.gather_rows(anchor_all, contrast_rows);

        SequenceBatch b1 = make_batch(v1_items, cfg.model.max_aug_len);
        NR r1 = sequence_repr(tape, encode(tape, b1, rec, true, drop_rng), b1);
        SequenceBatch b2 = make_batch(v2_items, cfg.model.max_aug_len);
        NR r2 = sequence_repr(tape, encode(tape, b2, rec, true, drop_rng), b2);

        if (alpha != 0.0) qmp = l_qmp(tape, anchor, r1, r2, weights, cfg.loss.sim_temp);
        if (beta != 0.0) cl = l_cl(tape, r1, r2, cfg.loss.sim_temp, cfg.loss.symmetric_cl);
      }
      NR joint = joint_loss(tape, rec_l, qmp, cl, lw);

      double jv = tape.val(joint)(0, 0);
      if (!std::isfinite(jv)) {
        throw TrainingDivergence("stage-two loss is not finite at epoch " + std::to_string(epoch));
      }
      sum_joint += jv;
      sum_rec += tape.val(rec_l)(0, 0);
      if (qmp != nullptr) sum_qmp += tape.val(qmp)(0, 0);
      if (cl != nullptr) sum_cl += tape.val(cl)(0, 0);
      ++n_batches;
      result.step_losses.push_back(jv);

      tape.backward(joint);
      opt.step(trainable);
    }

    MetricReport val = evaluate_model(rec, splits, EvalSplit::Valid, cfg.batch_size);
    double dn = n_batches > 0 ? static_cast<double>(n_batches) : 1.0;
    result.train_losses.push_back(sum_joint / dn);

    char buf[320];
    std::snprintf(buf, sizeof(buf), "stage2\t%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f", epoch,
                  sum_joint / dn, sum_rec / dn, sum_qmp / dn, sum_cl / dn, val.ndcg10);
    log_line(log, buf);

    bool improved = val.ndcg10 > best_ndcg;
    Checkpoint ck = make_stage2_checkpoint(rec, frozen ? &*frozen : nullptr, cfg, config_text,
                                           epoch, improved ? val.ndcg10 : best_ndcg, opt.t);
    if (improved || result.best.tensors.empty()) {
      if (improved) {
        best_ndcg = val.ndcg10;
        result.best_valid_ndcg10 = val.ndcg10;
        result.best_epoch = epoch;
        since_best = 0;
      }
      result.best = ck;
      if (!out_dir.empty()) ck.save(out_dir + "/stage2_best.ckpt");
    }
    if (!improved) ++since_best;
    if (!out_dir.empty()) ck.save(out_dir + "/stage2_last.ckpt");
    if (since_best >= cfg.patience) break;
  }
  return result;
}

}  // namespace qcmp
