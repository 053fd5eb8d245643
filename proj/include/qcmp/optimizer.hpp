#pragma once

#include <cmath>
#include <vector>

#include "qcmp/autograd.hpp"

namespace qcmp {

/// Adaptive-moment optimizer with global-norm gradient clipping.
struct Adam {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
  long long t = 0;

  /// Applies one update and clears the gradients.
  void step(const std::vector<ag::Param*>& params) {
    ++t;
    if (clip_norm > 0.0) {
      double sq = 0.0;
      for (const ag::Param* p : params) sq += p->grad.squaredNorm();
      double norm = std::sqrt(sq);
      if (norm > clip_norm) {
        double scale = clip_norm / norm;
        for (ag::Param* p : params) p->grad *= scale;
      }
    }
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (ag::Param* p : params) {
      p->m = beta1 * p->m + (1.0 - beta1) * p->grad;
      p->v = beta2 * p->v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -=
          lr * (p->m.array() / c1) / ((p->v.array() / c2).sqrt() + eps);
      p->grad.setZero();
    }
  }

  void zero_grads(const std::vector<ag::Param*>& params) {
    for (ag::Param* p : params) p->grad.setZero();
  }
};

}  // namespace qcmp
