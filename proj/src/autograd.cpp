#include "qcmp/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace qcmp::ag {

NR Tape::make(Mat storage, bool needs, std::function<void()> back) {
  auto node = std::make_unique<Node>();
  node->storage = std::move(storage);
  node->value = &node->storage;
  node->needs_grad = needs && grad_enabled_;
  if (node->needs_grad) node->backward = std::move(back);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

NR Tape::make_like(const Mat* external, bool needs, std::function<void()> back) {
  auto node = std::make_unique<Node>();
  node->value = external;
  node->needs_grad = needs && grad_enabled_;
  if (node->needs_grad) node->backward = std::move(back);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

NR Tape::param(Param& p) {
  Param* pp = &p;
  NR n = make_like(&p.value, true, nullptr);
  n->backward = [n, pp]() {
    if (n->grad.size() != 0) pp->grad += n->grad;
  };
  return n;
}

NR Tape::constant(Mat m) { return make(std::move(m), false, nullptr); }

void Tape::backward(NR loss) {
  if (!grad_enabled_) throw std::runtime_error("backward() on a no-grad tape");
  if (loss->val().rows() != 1 || loss->val().cols() != 1) {
    throw std::runtime_error("backward() expects a 1x1 loss node");
  }
  loss->ensure_grad();
  loss->grad(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (n->needs_grad && n->grad.size() != 0 && n->backward) n->backward();
  }
}

NR Tape::add(NR a, NR b) {
  NR out = make(a->val() + b->val(), a->needs_grad || b->needs_grad, nullptr);
  out->backward = [out, a, b]() {
    if (a->needs_grad) a->add_grad(out->grad);
    if (b->needs_grad) b->add_grad(out->grad);
  };
  return out;
}

NR Tape::sub(NR a, NR b) {
  NR out = make(a->val() - b->val(), a->needs_grad || b->needs_grad, nullptr);
  out->backward = [out, a, b]() {
    if (a->needs_grad) a->add_grad(out->grad);
    if (b->needs_grad) b->add_grad(-out->grad);
  };
  return out;
}

NR Tape::scale(NR a, double s) {
  NR out = make(a->val() * s, a->needs_grad, nullptr);
  out->backward = [out, a, s]() {
    if (a->needs_grad) a->add_grad(out->grad * s);
  };
  return out;
}

NR Tape::hadamard(NR a, NR b) {
  NR out = make(a->val().cwiseProduct(b->val()), a->needs_grad || b->needs_grad, nullptr);
  out->backward = [out, a, b]() {
    if (a->needs_grad) a->add_grad(out->grad.cwiseProduct(b->val()));
    if (b->needs_grad) b->add_grad(out->grad.cwiseProduct(a->val()));
  };
  return out;
}

NR Tape::matmul(NR a, NR b, bool trans_a, bool trans_b) {
  Mat res;
  if (!trans_a && !trans_b) res = a->val() * b->val();
  else if (trans_a && !trans_b) res = a->val().transpose() * b->val();
  else if (!trans_a && trans_b) res = a->val() * b->val().transpose();
  else res = a->val().transpose() * b->val().transpose();

  NR out = make(std::move(res), a->needs_grad || b->needs_grad, nullptr);
  out->backward = [out, a, b, trans_a, trans_b]() {
    const Mat& g = out->grad;
    if (a->needs_grad) {
      if (!trans_a && !trans_b) a->add_grad(g * b->val().transpose());
      else if (trans_a && !trans_b) a->add_grad(b->val() * g.transpose());
      else if (!trans_a && trans_b) a->add_grad(g * b->val());
      else a->add_grad(b->val().transpose() * g.transpose());
    }
    if (b->needs_grad) {
      if (!trans_a && !trans_b) b->add_grad(a->val().transpose() * g);
      else if (trans_a && !trans_b) b->add_grad(a->val() * g);
      else if (!trans_a && trans_b) b->add_grad(g.transpose() * a->val());
      else b->add_grad(g.transpose() * a->val().transpose());
    }
  };
  return out;
}

NR Tape::add_rowvec(NR a, NR row) {
  Mat res = a->val();
  res.rowwise() += row->val().row(0);
  NR out = make(std::move(res), a->needs_grad || row->needs_grad, nullptr);
  out->backward = [out, a, row]() {
    if (a->needs_grad) a->add_grad(out->grad);
    if (row->needs_grad) row->add_grad(out->grad.colwise().sum());
  };
  return out;
}

NR Tape::scale_rows(NR a, NR s) {
  Mat res = a->val().array().colwise() * s->val().col(0).array();
  NR out = make(std::move(res), a->needs_grad || s->needs_grad, nullptr);
  out->backward = [out, a, s]() {
    if (a->needs_grad) a->add_grad(out->grad.array().colwise() * s->val().col(0).array());
    if (s->needs_grad) {
      Mat gs = (out->grad.cwiseProduct(a->val())).rowwise().sum();
      s->add_grad(gs);
    }
  };
  return out;
}

NR Tape::relu(NR a) {
  NR out = make(a->val().cwiseMax(0.0), a->needs_grad, nullptr);
  out->backward = [out, a]() {
    if (!a->needs_grad) return;
    a->add_grad((a->val().array() > 0.0).cast<double>().matrix().cwiseProduct(out->grad));
  };
  return out;
}

NR Tape::tanh_(NR a) {
  Mat t = a->val().array().tanh();
  NR out = make(std::move(t), a->needs_grad, nullptr);
  out->backward = [out, a]() {
    if (!a->needs_grad) return;
    a->add_grad(((1.0 - out->val().array().square()) * out->grad.array()).matrix());
  };
  return out;
}

NR Tape::dropout(NR a, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return a;
  Mat mask(a->val().rows(), a->val().cols());
  double scale = 1.0 / (1.0 - p);
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
      mask(i, j) = rng.uniform_real() < p ? 0.0 : scale;
    }
  }
  NR out = make(a->val().cwiseProduct(mask), a->needs_grad, nullptr);
  out->backward = [out, a, mask = std::move(mask)]() {
    if (a->needs_grad) a->add_grad(out->grad.cwiseProduct(mask));
  };
  return out;
}

NR Tape::gather_rows(NR a, std::vector<int> idx) {
  Mat res = Mat::Zero(static_cast<Eigen::Index>(idx.size()), a->val().cols());
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= 0) res.row(static_cast<Eigen::Index>(r)) = a->val().row(idx[r]);
  }
  NR out = make(std::move(res), a->needs_grad, nullptr);
  out->backward = [out, a, idx = std::move(idx)]() {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] >= 0) a->grad.row(idx[r]) += out->grad.row(static_cast<Eigen::Index>(r));
    }
  };
  return out;
}

NR Tape::concat_rows(const std::vector<NR>& parts) {
  Eigen::Index rows = 0;
  bool needs = false;
  for (NR p : parts) {
    rows += p->val().rows();
    needs = needs || p->needs_grad;
  }
  Mat res(rows, parts.empty() ? 0 : parts[0]->val().cols());
  Eigen::Index at = 0;
  for (NR p : parts) {
    res.middleRows(at, p->val().rows()) = p->val();
    at += p->val().rows();
  }
  NR out = make(std::move(res), needs, nullptr);
  out->backward = [out, parts]() {
    Eigen::Index at = 0;
    for (NR p : parts) {
      if (p->needs_grad) p->add_grad(out->grad.middleRows(at, p->val().rows()));
      at += p->val().rows();
    }
  };
  return out;
}

NR Tape::group_mean_rows(NR a, std::vector<int> offsets) {
  int groups = static_cast<int>(offsets.size()) - 1;
  Mat res = Mat::Zero(groups, a->val().cols());
  for (int k = 0; k < groups; ++k) {
    int n = offsets[k + 1] - offsets[k];
    if (n > 0) res.row(k) = a->val().middleRows(offsets[k], n).colwise().mean();
  }
  NR out = make(std::move(res), a->needs_grad, nullptr);
  out->backward = [out, a, offsets = std::move(offsets)]() {
    if (!a->needs_grad) return;
    a->ensure_grad();
    int groups = static_cast<int>(offsets.size()) - 1;
    for (int k = 0; k < groups; ++k) {
      int n = offsets[k + 1] - offsets[k];
      if (n > 0) {
        a->grad.middleRows(offsets[k], n).rowwise() += out->grad.row(k) / n;
      }
    }
  };
  return out;
}

NR Tape::layer_norm(NR a, NR gamma, NR beta, double eps) {
  const Mat& x = a->val();
  Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Mat res = (xhat.array().rowwise() * gamma->val().row(0).array()).rowwise() +
            beta->val().row(0).array();
  bool needs = a->needs_grad || gamma->needs_grad || beta->needs_grad;
  NR out = make(std::move(res), needs, nullptr);
  out->backward = [out, a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
    const Mat& g = out->grad;
    if (beta->needs_grad) beta->add_grad(g.colwise().sum());
    if (gamma->needs_grad) gamma->add_grad(g.cwiseProduct(xhat).colwise().sum());
    if (a->needs_grad) {
      Eigen::Index n = g.rows(), d = g.cols();
      Mat dxhat = g.array().rowwise() * gamma->val().row(0).array();
      Mat dx(n, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        double m1 = dxhat.row(i).mean();
        double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        dx.row(i) =
            inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
      }
      a->add_grad(dx);
    }
  };
  return out;
}

namespace {

// Stable rowwise softmax in place.
void softmax_rows_inplace(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    double s = m.row(i).sum();
    if (s > 0) m.row(i) /= s;
  }
}

}  // namespace

NR Tape::softmax_rows(NR a) {
  Mat p = a->val();
  softmax_rows_inplace(p);
  NR out = make(std::move(p), a->needs_grad, nullptr);
  out->backward = [out, a]() {
    if (!a->needs_grad) return;
    const Mat& p = out->val();
    const Mat& g = out->grad;
    Mat da(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double dot = g.row(i).dot(p.row(i));
      da.row(i) = p.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    a->add_grad(da);
  };
  return out;
}

NR Tape::weighted_softmax_rows(NR a, Vec weights) {
  const Mat& x = a->val();
  Mat p(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = x.row(i).maxCoeff();
    p.row(i) = (x.row(i).array() - mx).exp() * weights.transpose().array();
    double s = p.row(i).sum();
    if (s <= 0.0) throw std::runtime_error("weighted softmax: all weights zero on a row");
    p.row(i) /= s;
  }
  NR out = make(std::move(p), a->needs_grad, nullptr);
  out->backward = [out, a]() {
    if (!a->needs_grad) return;
    // Same form as plain softmax: weights are folded into the probabilities.
    const Mat& p = out->val();
    const Mat& g = out->grad;
    Mat da(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double dot = g.row(i).dot(p.row(i));
      da.row(i) = p.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    a->add_grad(da);
  };
  return out;
}

NR Tape::causal_self_attention(NR q, NR k, NR v, const BatchMeta& meta, double attn_dropout,
                               Rng& rng, bool train) {
  const int B = meta.batch, L = meta.len, H = meta.heads;
  const Eigen::Index e = q->val().cols();
  const Eigen::Index dh = e / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_drop = train && attn_dropout > 0.0;

  Mat res = Mat::Zero(q->val().rows(), e);
  // Per (sequence, head) attention probabilities, kept for backward.
  auto probs = std::make_shared<std::vector<Mat>>();
  auto masks = std::make_shared<std::vector<Mat>>();
  probs->reserve(static_cast<size_t>(B) * H);
  if (use_drop) masks->reserve(static_cast<size_t>(B) * H);

  for (int b = 0; b < B; ++b) {
    int n = meta.lengths[b];
    int s = L - n;  // first real position
    for (int h = 0; h < H; ++h) {
      Mat p = Mat::Zero(L, L);
      if (n > 0) {
        auto qb = q->val().block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);
        auto kb = k->val().block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);
        Mat sc = qb * kb.transpose() * scale;  // n x n
        for (int i = 0; i < n; ++i) {
          double mx = sc.row(i).head(i + 1).maxCoeff();
          for (int j = 0; j <= i; ++j) p(s + i, s + j) = std::exp(sc(i, j) - mx);
          double sum = p.row(s + i).segment(s, i + 1).sum();
          p.row(s + i).segment(s, i + 1) /= sum;
        }
      }
      Mat used = p;
      if (use_drop) {
        Mat mask = Mat::Zero(L, L);
        double dscale = 1.0 / (1.0 - attn_dropout);
        for (int i = s; i < L; ++i) {
          for (int j = s; j <= i; ++j) mask(i, j) = rng.uniform_real() < attn_dropout ? 0.0 : dscale;
        }
        used = p.cwiseProduct(mask);
        masks->push_back(std::move(mask));
      }
      if (n > 0) {
        auto vb = v->val().block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);
        res.block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh) =
            used.block(s, s, n, n) * vb;
      }
      probs->push_back(std::move(p));
    }
  }

  bool needs = q->needs_grad || k->needs_grad || v->needs_grad;
  NR out = make(std::move(res), needs, nullptr);
  BatchMeta meta_copy = meta;
  out->backward = [out, q, k, v, meta = std::move(meta_copy), probs, masks, scale, dh, H,
                   use_drop, attn_dropout]() {
    const int B = meta.batch, L = meta.len;
    q->ensure_grad();
    k->ensure_grad();
    v->ensure_grad();
    for (int b = 0; b < B; ++b) {
      int n = meta.lengths[b];
      if (n == 0) continue;
      int s = L - n;
      for (int h = 0; h < H; ++h) {
        const Mat& p_full = (*probs)[static_cast<size_t>(b) * H + h];
        auto p = p_full.block(s, s, n, n);
        auto go = out->grad.block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);
        auto qb = q->val().block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);
        auto kb = k->val().block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);
        auto vb = v->val().block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh);

        Mat used = p;
        if (use_drop) {
          used = p.cwiseProduct((*masks)[static_cast<size_t>(b) * H + h].block(s, s, n, n));
        }
        // dV
        v->grad.block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh) +=
            used.transpose() * go;
        // d(used probs)
        Mat dp_used = go * vb.transpose();  // n x n
        Mat dp = dp_used;
        if (use_drop) {
          dp = dp_used.cwiseProduct((*masks)[static_cast<size_t>(b) * H + h].block(s, s, n, n));
        }
        // softmax backward per causal row
        Mat ds = Mat::Zero(n, n);
        for (int i = 0; i < n; ++i) {
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
          for (int j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
        }
        q->grad.block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh) +=
            ds * kb * scale;
        k->grad.block(static_cast<Eigen::Index>(b) * L + s, h * dh, n, dh) +=
            ds.transpose() * qb * scale;
      }
    }
  };
  return out;
}

NR Tape::joint_context_attention(NR anchor, NR ctx, std::vector<int> offsets) {
  const Mat& he = anchor->val();
  const Mat& c = ctx->val();
  const int K = static_cast<int>(offsets.size()) - 1;
  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(K);

  Mat acc = Mat::Zero(he.rows(), he.cols());
  for (int k = 0; k < K; ++k) {
    int n = offsets[k + 1] - offsets[k];
    if (n <= 0) {
      probs->push_back(Mat());
      continue;
    }
    auto ck = c.middleRows(offsets[k], n);
    Mat a = he * ck.transpose();  // L x n
    softmax_rows_inplace(a);
    acc += a * ck;
    probs->push_back(std::move(a));
  }
  Mat res = he + acc / K;

  bool needs = anchor->needs_grad || ctx->needs_grad;
  NR out = make(std::move(res), needs, nullptr);
  out->backward = [out, anchor, ctx, offsets = std::move(offsets), probs]() {
    const Mat& g = out->grad;
    const int K = static_cast<int>(offsets.size()) - 1;
    if (anchor->needs_grad) anchor->add_grad(g);
    Mat gk = g / K;
    for (int k = 0; k < K; ++k) {
      int n = offsets[k + 1] - offsets[k];
      if (n <= 0) continue;
      const Mat& a = (*probs)[k];
      auto ck = ctx->val().middleRows(offsets[k], n);
      if (ctx->needs_grad) {
        ctx->ensure_grad();
        ctx->grad.middleRows(offsets[k], n) += a.transpose() * gk;
      }
      Mat dp = gk * ck.transpose();  // L x n
      Mat ds(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double dot = dp.row(i).dot(a.row(i));
        ds.row(i) = a.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
      }
      if (anchor->needs_grad) anchor->add_grad(ds * ck);
      if (ctx->needs_grad) ctx->grad.middleRows(offsets[k], n) += ds.transpose() * anchor->val();
    }
  };
  return out;
}

NR Tape::additive_scores(NR a, NR b, NR v) {
  const Mat& A = a->val();  // K x e
  const Mat& B = b->val();  // m x e
  Mat res(B.rows(), A.rows());
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    Mat t = (A.rowwise() + B.row(i)).array().tanh();
    res.row(i) = (t * v->val()).transpose();
  }
  bool needs = a->needs_grad || b->needs_grad || v->needs_grad;
  NR out = make(std::move(res), needs, nullptr);
  out->backward = [out, a, b, v]() {
    const Mat& A = a->val();
    const Mat& B = b->val();
    const Mat& g = out->grad;
    for (Eigen::Index i = 0; i < B.rows(); ++i) {
      Mat t = (A.rowwise() + B.row(i)).array().tanh();   // K x e
      Mat dt = (1.0 - t.array().square()).matrix();      // K x e
      // d score(i,k) / d pre(k,e') = v(e') * dt(k,e')
      Mat dpre = dt.array().rowwise() * v->val().col(0).transpose().array();
      dpre = dpre.array().colwise() * g.row(i).transpose().array();  // K x e
      if (a->needs_grad) a->add_grad(dpre);
      if (b->needs_grad) {
        b->ensure_grad();
        b->grad.row(i) += dpre.colwise().sum();
      }
      if (v->needs_grad) {
        v->ensure_grad();
        v->grad += (t.array().colwise() * g.row(i).transpose().array()).colwise().sum().transpose().matrix();
      }
    }
  };
  return out;
}

NR Tape::cross_entropy_rows(NR logits, std::vector<int> targets) {
  Mat p = logits->val();
  softmax_rows_inplace(p);
  double loss = 0.0;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    loss -= std::log(std::max(p(static_cast<Eigen::Index>(r), targets[r]), 1e-300));
  }
  Mat res(1, 1);
  res(0, 0) = loss;
  NR out = make(std::move(res), logits->needs_grad, nullptr);
  out->backward = [out, logits, p = std::move(p), targets = std::move(targets)]() {
    if (!logits->needs_grad) return;
    double g = out->grad(0, 0);
    Mat dl = Mat::Zero(p.rows(), p.cols());
    for (size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] < 0) continue;
      auto i = static_cast<Eigen::Index>(r);
      dl.row(i) = p.row(i) * g;
      dl(i, targets[r]) -= g;
    }
    logits->add_grad(dl);
  };
  return out;
}

NR Tape::nll_rows(NR probs, std::vector<int> targets) {
  double loss = 0.0;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    loss -= std::log(std::max(probs->val()(static_cast<Eigen::Index>(r), targets[r]), 1e-300));
  }
  Mat res(1, 1);
  res(0, 0) = loss;
  NR out = make(std::move(res), probs->needs_grad, nullptr);
  out->backward = [out, probs, targets = std::move(targets)]() {
    if (!probs->needs_grad) return;
    double g = out->grad(0, 0);
    probs->ensure_grad();
    for (size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] < 0) continue;
      auto i = static_cast<Eigen::Index>(r);
      probs->grad(i, targets[r]) -=
          g / std::max(probs->val()(i, targets[r]), 1e-300);
    }
  };
  return out;
}

NR Tape::info_nce_rows(NR sims, std::vector<int> pos, std::vector<int> excluded, Vec weights) {
  const Mat& s = sims->val();
  Mat p = Mat::Zero(s.rows(), s.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    int ex = excluded[static_cast<size_t>(r)];
    double mx = -1e300;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (c != ex) mx = std::max(mx, s(r, c));
    }
    double denom = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (c == ex) continue;
      p(r, c) = std::exp(s(r, c) - mx);
      denom += p(r, c);
    }
    p.row(r) /= denom;
    loss -= weights(r) * std::log(std::max(p(r, pos[static_cast<size_t>(r)]), 1e-300));
  }
  Mat res(1, 1);
  res(0, 0) = loss;
  NR out = make(std::move(res), sims->needs_grad, nullptr);
  out->backward = [out, sims, p = std::move(p), pos = std::move(pos), weights = std::move(weights)]() {
    if (!sims->needs_grad) return;
    double g = out->grad(0, 0);
    Mat ds = p;
    for (Eigen::Index r = 0; r < ds.rows(); ++r) {
      ds.row(r) *= weights(r);
      ds(r, pos[static_cast<size_t>(r)]) -= weights(r);
    }
    sims->add_grad(ds * g);
  };
  return out;
}

}  // namespace qcmp::ag
