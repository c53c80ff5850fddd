#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "punctasr/types.hpp"

namespace punctasr {

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  int warmup_steps = 500;  // linear ramp from lr / warmup to lr

  void validate() const;
  double rate_at(std::int64_t step) const;  // step is 1-based
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// Bias-corrected Adam update. Returns false without touching params or state
// when any gradient entry is non-finite.
bool adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state,
               const AdamHyper& hyper);

}  // namespace punctasr
