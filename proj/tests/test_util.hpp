#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qcmp/autograd.hpp"
#include "qcmp/corpus.hpp"
#include "qcmp/rng.hpp"

namespace qcmp::test {

/// Central finite differences against the tape gradients. `build` must
/// construct the full loss on the given tape from the current parameter
/// values (dropout off so the function is deterministic). Checks up to
/// `samples` entries per parameter and returns the worst relative error.
inline double check_gradients(const std::vector<ag::Param*>& params,
                              const std::function<ag::NR(ag::Tape&)>& build, int samples = 12,
                              double h = 1e-5) {
  for (ag::Param* p : params) p->grad.setZero();
  ag::Tape tape;
  ag::NR loss = build(tape);
  tape.backward(loss);

  auto eval = [&]() {
    ag::Tape t(/*grad_enabled=*/false);
    return t.val(build(t))(0, 0);
  };

  double worst = 0.0;
  Rng rng(20240817);
  for (ag::Param* p : params) {
    Eigen::Index n = p->value.size();
    int take = std::min<Eigen::Index>(n, samples);
    for (int s = 0; s < take; ++s) {
      Eigen::Index flat = static_cast<Eigen::Index>(rng.next_below(static_cast<uint64_t>(n)));
      double saved = p->value.data()[flat];
      p->value.data()[flat] = saved + h;
      double up = eval();
      p->value.data()[flat] = saved - h;
      double down = eval();
      p->value.data()[flat] = saved;
      double numeric = (up - down) / (2 * h);
      double analytic = p->grad.data()[flat];
      double denom = std::max({1e-6, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

struct PlantedCorpusOptions {
  int num_items = 200;
  int num_chains = 10;
  int num_sequences = 2000;
  int min_len = 6;
  int max_len = 10;
  double noise_rate = 0.15;  // chance of a random item injected after a step
  uint64_t seed = 7;
};

/// Sequences walk one of `num_chains` fixed item cycles, with uniformly
/// random off-chain items injected at interior positions. The final three
/// positions are always clean so the leave-one-out targets follow the
/// chain.
inline InteractionCorpus make_planted_corpus(const PlantedCorpusOptions& opt = {}) {
  InteractionCorpus corpus;
  corpus.num_items = opt.num_items;
  Rng rng(opt.seed);

  int per_chain = opt.num_items / opt.num_chains;
  std::vector<std::vector<int>> chains(opt.num_chains);
  {
    std::vector<int> items(opt.num_items);
    for (int i = 0; i < opt.num_items; ++i) items[i] = i + 1;
    shuffle(items, rng);
    for (int c = 0; c < opt.num_chains; ++c) {
      chains[c].assign(items.begin() + c * per_chain, items.begin() + (c + 1) * per_chain);
    }
  }

  for (int s = 0; s < opt.num_sequences; ++s) {
    const auto& chain = chains[s % opt.num_chains];
    int len = rng.uniform_int(opt.min_len, opt.max_len + 1);
    int start = rng.uniform_int(0, static_cast<int>(chain.size()));
    std::vector<int> seq;
    for (int t = 0; t < len; ++t) {
      seq.push_back(chain[(start + t) % chain.size()]);
      bool tail = t >= len - 3;
      if (!tail && rng.uniform_real() < opt.noise_rate) {
        seq.push_back(rng.uniform_int(1, opt.num_items + 1));
      }
    }
    corpus.sequences.push_back(std::move(seq));
    corpus.num_records += static_cast<long long>(corpus.sequences.back().size());
    corpus.user_raw.push_back("u" + std::to_string(s + 1));
  }
  for (int i = 0; i < opt.num_items; ++i) corpus.item_raw.push_back("i" + std::to_string(i + 1));
  return corpus;
}

}  // namespace qcmp::test
