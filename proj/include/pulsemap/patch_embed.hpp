#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pulsemap/params.hpp"
#include "pulsemap/tensor.hpp"
#include "pulsemap/transform2d.hpp"

namespace pulsemap {

/// Which input stream a token sequence belongs to. The numeric value indexes
/// `modality_embed` and selects the `face.` / `bio.` parameter prefix.
enum class InputModality { Face = 0, Biosensor = 1 };

const char* stream_prefix(InputModality m);

/// Flattened patches in row-major grid order, one row per patch. Each row is
/// channel-last pixels of a patch_size x patch_size tile.
struct PatchGrid {
  Matrix patches;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch_size = 0;

  std::size_t n_patches() const { return grid_h * grid_w; }
};

struct GridPos {
  int row = -1;
  int col = -1;
  bool operator==(const GridPos&) const = default;
};

/// Embedded tokens; when `has_cls` is set, row 0 is the CLS slot with
/// position {-1, -1}.
struct TokenSequence {
  Matrix tokens;
  InputModality modality = InputModality::Face;
  bool has_cls = true;
  std::vector<GridPos> position_ids;

  std::size_t size() const { return static_cast<std::size_t>(tokens.rows()); }
};

/// Patch indices (0-based over the grid, CLS excluded) hidden from the encoder.
struct MaskPlan {
  std::vector<std::size_t> masked_indices;  // sorted ascending
  std::size_t n_masked = 0;
  std::size_t n_patches = 0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> visible_indices() const;
  bool is_masked(std::size_t patch) const;
};

/// Raw (unnormalized) tiles of an image.
PatchGrid extract_patches(const ImageTensor& image, std::size_t patch_size);
/// Inverse of extract_patches.
ImageTensor assemble_patches(const PatchGrid& grid);
/// Per-row standardization to zero mean, unit variance (variance floored at 1e-6).
void standardize_patches(Matrix& patches);

/// 16x16 tiles of a 224x224x3 image, each standardized.
PatchGrid patchify(const ImageTensor& image, std::size_t patch_size = 16);
/// As above for an image of any side divisible by patch_size.
PatchGrid patchify_any(const ImageTensor& image, std::size_t patch_size);

TokenSequence embed_tokens(const PatchGrid& grid, InputModality modality, const ParamStore& params);

MaskPlan plan_mask(std::size_t n_patches, double ratio, std::uint64_t seed);
/// Plan with an explicit index set (sorted and de-duplicated here).
MaskPlan make_plan(std::size_t n_patches, std::vector<std::size_t> masked);

TokenSequence apply_mask(const TokenSequence& tokens, const MaskPlan& plan);

}  // namespace pulsemap
