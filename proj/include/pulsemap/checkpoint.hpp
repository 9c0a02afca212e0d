#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "pulsemap/optim.hpp"
#include "pulsemap/params.hpp"

namespace pulsemap {

/// On disk: `manifest.json` (array of {name, shape, dtype:"f32", byte_offset})
/// and `weights.bin` (little-endian float32, row-major, manifest order).
/// Optimizer moments go to `adam_m.bin` / `adam_v.bin` with the same layout,
/// the step counter to `state.json`.
struct Checkpoint {
  ParamStore params;
  std::optional<AdamState> optimizer;
  std::int64_t step = 0;
};

void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const AdamState* optimizer = nullptr, std::int64_t step = 0);

/// Loads and validates every tensor shape against `config`.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const TransformerConfig& config);

}  // namespace pulsemap
