#include "qcmp/seq_model.hpp"

#include <cmath>
#include <stdexcept>

namespace qcmp {

using ag::Mat;
using ag::NR;
using ag::Param;
using ag::Tape;

void ModelConfig::validate() const {
  if (num_items <= 0) throw std::runtime_error("model config: num_items must be positive");
  if (embed_dim % num_heads != 0) {
    throw std::runtime_error("model config: embed_dim must be divisible by num_heads");
  }
  if (max_aug_len < max_raw_len) {
    throw std::runtime_error("model config: max_aug_len must be >= max_raw_len");
  }
}

SequenceBatch make_batch(const std::vector<std::vector<int>>& rows, int max_len) {
  int len = 1;
  for (const auto& r : rows) len = std::max(len, std::min<int>(max_len, static_cast<int>(r.size())));
  SequenceBatch batch;
  batch.ids = Eigen::MatrixXi::Zero(static_cast<int>(rows.size()), len);
  batch.lengths.resize(rows.size());
  for (size_t b = 0; b < rows.size(); ++b) {
    int n = std::min<int>(max_len, static_cast<int>(rows[b].size()));
    batch.lengths[b] = n;
    size_t start = rows[b].size() - static_cast<size_t>(n);  // keep the suffix
    for (int p = 0; p < n; ++p) {
      batch.ids(static_cast<int>(b), len - n + p) = rows[b][start + p];
    }
  }
  return batch;
}

namespace {

void xavier_init(Mat& m, Rng& rng) {
  double limit = std::sqrt(6.0 / (m.rows() + m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform_real(-limit, limit);
  }
}

Param make_xavier(const std::string& name, int rows, int cols, Rng& rng) {
  Param p(name, rows, cols);
  xavier_init(p.value, rng);
  return p;
}

Param make_const(const std::string& name, int rows, int cols, double fill) {
  Param p(name, rows, cols);
  p.value.setConstant(fill);
  return p;
}

}  // namespace

void TransformerStack::init(const std::string& prefix, int e, int num_layers, Rng& rng) {
  layers.clear();
  int ff = 4 * e;
  for (int l = 0; l < num_layers; ++l) {
    std::string p = prefix + ".l" + std::to_string(l) + ".";
    Layer layer;
    layer.wq = make_xavier(p + "wq", e, e, rng);
    layer.bq = make_const(p + "bq", 1, e, 0.0);
    layer.wk = make_xavier(p + "wk", e, e, rng);
    layer.bk = make_const(p + "bk", 1, e, 0.0);
    layer.wv = make_xavier(p + "wv", e, e, rng);
    layer.bv = make_const(p + "bv", 1, e, 0.0);
    layer.wo = make_xavier(p + "wo", e, e, rng);
    layer.bo = make_const(p + "bo", 1, e, 0.0);
    layer.ln1_g = make_const(p + "ln1_g", 1, e, 1.0);
    layer.ln1_b = make_const(p + "ln1_b", 1, e, 0.0);
    layer.w1 = make_xavier(p + "w1", e, ff, rng);
    layer.b1 = make_const(p + "b1", 1, ff, 0.0);
    layer.w2 = make_xavier(p + "w2", ff, e, rng);
    layer.b2 = make_const(p + "b2", 1, e, 0.0);
    layer.ln2_g = make_const(p + "ln2_g", 1, e, 1.0);
    layer.ln2_b = make_const(p + "ln2_b", 1, e, 0.0);
    layers.push_back(std::move(layer));
  }
}

void TransformerStack::collect(std::vector<Param*>& out) {
  for (auto& l : layers) {
    for (Param* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_g, &l.ln1_b,
                     &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_g, &l.ln2_b}) {
      out.push_back(p);
    }
  }
}

NR TransformerStack::forward(Tape& tape, NR x, const ag::BatchMeta& meta, double dropout,
                             Rng& drop_rng, bool train) const {
  NR h = x;
  for (const auto& l : layers) {
    auto& lp = const_cast<Layer&>(l);
    NR q = tape.add_rowvec(tape.matmul(h, tape.param(lp.wq)), tape.param(lp.bq));
    NR k = tape.add_rowvec(tape.matmul(h, tape.param(lp.wk)), tape.param(lp.bk));
    NR v = tape.add_rowvec(tape.matmul(h, tape.param(lp.wv)), tape.param(lp.bv));
    NR attn = tape.causal_self_attention(q, k, v, meta, dropout, drop_rng, train);
    NR proj = tape.add_rowvec(tape.matmul(attn, tape.param(lp.wo)), tape.param(lp.bo));
    proj = tape.dropout(proj, dropout, drop_rng, train);
    h = tape.layer_norm(tape.add(h, proj), tape.param(lp.ln1_g), tape.param(lp.ln1_b));

    NR ff = tape.relu(tape.add_rowvec(tape.matmul(h, tape.param(lp.w1)), tape.param(lp.b1)));
    ff = tape.add_rowvec(tape.matmul(ff, tape.param(lp.w2)), tape.param(lp.b2));
    ff = tape.dropout(ff, dropout, drop_rng, train);
    h = tape.layer_norm(tape.add(h, ff), tape.param(lp.ln2_g), tape.param(lp.ln2_b));
  }
  return h;
}

std::vector<Param*> ModelParams::all() {
  std::vector<Param*> out;
  out.push_back(&item_emb);
  out.push_back(&pos_emb);
  encoder.collect(out);
  decoder.collect(out);
  return out;
}

std::vector<const Param*> ModelParams::all() const {
  auto mutable_all = const_cast<ModelParams*>(this)->all();
  return std::vector<const Param*>(mutable_all.begin(), mutable_all.end());
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams params;
  params.cfg = cfg;
  Rng rng = derive_rng(seed, {0x6d6f64656cULL});
  params.item_emb = make_xavier("item_emb", cfg.vocab_size(), cfg.embed_dim, rng);
  params.item_emb.value.row(0).setZero();  // padding embedding stays zero
  params.pos_emb = make_xavier("pos_emb", cfg.pos_count(), cfg.embed_dim, rng);
  params.encoder.init("enc", cfg.embed_dim, cfg.num_layers, rng);
  params.decoder.init("dec", cfg.embed_dim, cfg.num_layers, rng);
  return params;
}

NR embed_batch(Tape& tape, const SequenceBatch& batch, const ModelParams& params, double dropout,
               Rng& drop_rng, bool train) {
  const int B = batch.rows(), L = batch.len();
  std::vector<int> item_idx(static_cast<size_t>(B) * L, -1);
  std::vector<int> pos_idx(static_cast<size_t>(B) * L, -1);
  for (int b = 0; b < B; ++b) {
    int n = batch.lengths[b];
    int s = L - n;
    for (int p = s; p < L; ++p) {
      int id = batch.ids(b, p);
      if (id < 0 || id >= params.cfg.vocab_size()) {
        throw std::runtime_error("item id out of range: " + std::to_string(id));
      }
      item_idx[static_cast<size_t>(b) * L + p] = id;
      pos_idx[static_cast<size_t>(b) * L + p] = p - s;  // position within the sequence
    }
  }
  auto& mutable_params = const_cast<ModelParams&>(params);
  NR items = tape.gather_rows(tape.param(mutable_params.item_emb), std::move(item_idx));
  NR pos = tape.gather_rows(tape.param(mutable_params.pos_emb), std::move(pos_idx));
  NR h = tape.add(items, pos);
  return tape.dropout(h, dropout, drop_rng, train);
}

NR encode(Tape& tape, const SequenceBatch& batch, const ModelParams& params, bool train,
          Rng& drop_rng) {
  ag::BatchMeta meta{batch.rows(), batch.len(), params.cfg.num_heads, batch.lengths};
  NR h = embed_batch(tape, batch, params, params.cfg.dropout, drop_rng, train);
  return params.encoder.forward(tape, h, meta, params.cfg.dropout, drop_rng, train);
}

NR decode_logits(Tape& tape, NR h_enc, const SequenceBatch& batch, const ModelParams& params,
                 bool train, Rng& drop_rng) {
  ag::BatchMeta meta{batch.rows(), batch.len(), params.cfg.num_heads, batch.lengths};
  NR h = params.decoder.forward(tape, h_enc, meta, params.cfg.dropout, drop_rng, train);
  NR last = sequence_repr(tape, h, batch);  // the appended mask position
  // Tied output weights: logits over real items only.
  std::vector<int> real_rows(params.cfg.num_items);
  for (int i = 0; i < params.cfg.num_items; ++i) real_rows[i] = i + 1;
  auto& mutable_params = const_cast<ModelParams&>(params);
  NR e_real = tape.gather_rows(tape.param(mutable_params.item_emb), std::move(real_rows));
  return tape.matmul(last, e_real, false, true);
}

NR next_item_probs(Tape& tape, NR logits) { return tape.softmax_rows(logits); }

NR rec_loss(Tape& tape, NR logits, const std::vector<int>& targets) {
  std::vector<int> cols(targets.size(), -1);
  int valid = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] > 0) {
      cols[i] = targets[i] - 1;
      ++valid;
    }
  }
  if (valid == 0) throw std::runtime_error("rec_loss: no valid targets in batch");
  NR total = tape.cross_entropy_rows(logits, std::move(cols));
  return tape.scale(total, 1.0 / valid);
}

NR sequence_repr(Tape& tape, NR h, const SequenceBatch& batch, int offset) {
  const int L = batch.len();
  std::vector<int> idx(batch.lengths.size(), -1);
  for (size_t b = 0; b < batch.lengths.size(); ++b) {
    if (batch.lengths[b] > offset) idx[b] = static_cast<int>(b) * L + (L - 1 - offset);
  }
  return tape.gather_rows(h, std::move(idx));
}

Eigen::MatrixXd score_next_items(const ModelParams& params,
                                 const std::vector<std::vector<int>>& prefixes) {
  std::vector<std::vector<int>> rows = prefixes;
  for (auto& r : rows) {
    if (static_cast<int>(r.size()) > params.cfg.max_raw_len) {
      r.erase(r.begin(), r.end() - params.cfg.max_raw_len);
    }
    r.push_back(params.cfg.mask_id());
  }
  SequenceBatch batch = make_batch(rows, params.cfg.max_raw_len + 1);
  Tape tape(/*grad_enabled=*/false);
  Rng rng(0);
  NR h = encode(tape, batch, params, /*train=*/false, rng);
  NR logits = decode_logits(tape, h, batch, params, /*train=*/false, rng);
  NR probs = next_item_probs(tape, logits);
  return tape.val(probs);
}

}  // namespace qcmp
