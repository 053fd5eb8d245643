#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qcmp/autograd.hpp"

namespace qcmp {

/// Versioned binary container for a training state: stage tag, resolved
/// config text, epoch, RNG state, every parameter tensor with its optimizer
/// moments, and the optimizer step counter. save -> load -> save is
/// byte-identical.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string stage;        // "stage1" or "stage2"
  std::string config_text;  // resolved config snapshot
  int64_t epoch = 0;
  uint64_t rng_state = 0;
  int64_t adam_t = 0;
  double best_metric = 0.0;

  struct Tensor {
    std::string name;
    ag::Mat value;
    ag::Mat m;
    ag::Mat v;
  };
  std::vector<Tensor> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// Copies parameter values and moments in; tensor order follows `params`.
  void capture(const std::vector<ag::Param*>& params);
  /// Restores values and moments into matching params (by name; throws on
  /// mismatch).
  void restore(const std::vector<ag::Param*>& params) const;
};

}  // namespace qcmp
