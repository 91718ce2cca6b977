#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cdstraj/tensor.hpp"

namespace cdstraj {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates per parameter plus the step counter.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter from its gradient slot.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config);

/// Global L2 norm over all gradient slots.
double grad_global_norm(const ParamStore& params);

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace cdstraj
