#pragma once

#include <cstdint>

#include "pulsemap/params.hpp"

namespace pulsemap {

/// Cosine annealing from base_lr at step 0 to floor_fraction * base_lr at
/// total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr,
                   double floor_fraction = 0.0);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.001;  // decoupled, scaled by lr
};

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParamStore& params);
};

/// One bias-corrected Adam step. Weight decay touches Weight and Embedding
/// tensors only. Throws NumericsError on a non-finite gradient.
void adam_update(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
                 const AdamConfig& config);

/// Rounds every element to the nearest float, so a float32 checkpoint
/// reproduces the in-memory state exactly.
void round_to_f32(ParamStore& store);

}  // namespace pulsemap
