#include "pulsemap/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pulsemap/error.hpp"

namespace pulsemap {

double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, double floor_fraction) {
  if (total_steps <= 0) return base_lr;
  const double t = std::clamp(double(step) / double(total_steps), 0.0, 1.0);
  const double floor = floor_fraction * base_lr;
  return floor + (base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamState AdamState::zeros_like(const ParamStore& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_update(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
                 const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ConfigError("gradient/optimizer state does not match the parameter manifest");
  grads.check_finite("adam_update");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  auto& pe = params.entries();
  for (std::size_t i = 0; i < pe.size(); ++i) {
    Matrix& p = pe[i].value;
    const Matrix& g = grads.entries()[i].value;
    Matrix& m = state.m.entries()[i].value;
    Matrix& v = state.v.entries()[i].value;
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw ConfigError("gradient shape mismatch for '" + pe[i].name + "'");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const bool decay = pe[i].role == ParamRole::Weight || pe[i].role == ParamRole::Embedding;
    if (decay && cfg.weight_decay != 0.0) p *= 1.0 - lr * cfg.weight_decay;
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
  }
}

void round_to_f32(ParamStore& store) {
  for (auto& e : store.entries())
    e.value = e.value.unaryExpr([](double v) { return double(static_cast<float>(v)); });
}

}  // namespace pulsemap
