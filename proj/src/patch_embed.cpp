#include "pulsemap/patch_embed.hpp"

#include <algorithm>
#include <cmath>

#include "pulsemap/error.hpp"
#include "pulsemap/rng.hpp"

namespace pulsemap {

const char* stream_prefix(InputModality m) { return m == InputModality::Face ? "face" : "bio"; }

std::vector<std::size_t> MaskPlan::visible_indices() const {
  std::vector<std::size_t> out;
  out.reserve(n_patches - n_masked);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n_patches; ++i) {
    if (j < masked_indices.size() && masked_indices[j] == i) {
      ++j;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

bool MaskPlan::is_masked(std::size_t patch) const {
  return std::binary_search(masked_indices.begin(), masked_indices.end(), patch);
}

PatchGrid extract_patches(const ImageTensor& image, std::size_t patch_size) {
  if (patch_size == 0 || image.height == 0 || image.height % patch_size != 0 ||
      image.width % patch_size != 0)
    throw DataError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " does not tile into " + std::to_string(patch_size) + "-pixel patches");
  if (image.values.size() != image.height * image.width * image.channels)
    throw DataError("image buffer does not match its shape");
  PatchGrid g;
  g.grid_h = image.height / patch_size;
  g.grid_w = image.width / patch_size;
  g.patch_size = patch_size;
  const std::size_t dim = patch_size * patch_size * image.channels;
  g.patches.resize(static_cast<Eigen::Index>(g.n_patches()), static_cast<Eigen::Index>(dim));
  for (std::size_t gy = 0; gy < g.grid_h; ++gy)
    for (std::size_t gx = 0; gx < g.grid_w; ++gx) {
      const auto row = static_cast<Eigen::Index>(gy * g.grid_w + gx);
      Eigen::Index k = 0;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < image.channels; ++c)
            g.patches(row, k++) = image.at(gy * patch_size + y, gx * patch_size + x, c);
    }
  return g;
}

ImageTensor assemble_patches(const PatchGrid& grid) {
  const std::size_t ps = grid.patch_size;
  ImageTensor img;
  img.height = grid.grid_h * ps;
  img.width = grid.grid_w * ps;
  img.channels = static_cast<std::size_t>(grid.patches.cols()) / (ps * ps);
  img.values.assign(img.height * img.width * img.channels, 0.0);
  for (std::size_t gy = 0; gy < grid.grid_h; ++gy)
    for (std::size_t gx = 0; gx < grid.grid_w; ++gx) {
      const auto row = static_cast<Eigen::Index>(gy * grid.grid_w + gx);
      Eigen::Index k = 0;
      for (std::size_t y = 0; y < ps; ++y)
        for (std::size_t x = 0; x < ps; ++x)
          for (std::size_t c = 0; c < img.channels; ++c)
            img.at(gy * ps + y, gx * ps + x, c) = grid.patches(row, k++);
    }
  return img;
}

void standardize_patches(Matrix& patches) {
  const double n = double(patches.cols());
  for (Eigen::Index r = 0; r < patches.rows(); ++r) {
    auto row = patches.row(r);
    if (row.maxCoeff() == row.minCoeff()) {
      row.setZero();
      continue;
    }
    const double mean = row.sum() / n;
    row.array() -= mean;
    const double var = row.squaredNorm() / n;
    row /= std::sqrt(std::max(var, 1e-6));
  }
}

PatchGrid patchify_any(const ImageTensor& image, std::size_t patch_size) {
  if (image.channels != 3) throw DataError("patchify expects a 3-channel image");
  PatchGrid g = extract_patches(image, patch_size);
  standardize_patches(g.patches);
  return g;
}

PatchGrid patchify(const ImageTensor& image, std::size_t patch_size) {
  if (image.height != kImageSize || image.width != kImageSize || image.channels != 3)
    throw DataError("patchify expects a 224x224x3 image");
  return patchify_any(image, patch_size);
}

TokenSequence embed_tokens(const PatchGrid& grid, InputModality modality, const ParamStore& params) {
  const std::string m = stream_prefix(modality);
  const Matrix& w = params.get(m + ".patch_proj.w");
  const Matrix& b = params.get(m + ".patch_proj.b");
  const Matrix& rows = params.get(m + ".row_embed");
  const Matrix& cols = params.get(m + ".col_embed");
  const Matrix& mod = params.get("modality_embed");
  const Matrix& cls = params.get("cls");
  if (w.rows() != grid.patches.cols())
    throw ConfigError("'" + m + ".patch_proj.w' expects patch_dim " + std::to_string(w.rows()) +
                      ", grid has " + std::to_string(grid.patches.cols()));
  if (rows.rows() < static_cast<Eigen::Index>(grid.grid_h) ||
      cols.rows() < static_cast<Eigen::Index>(grid.grid_w))
    throw ConfigError("positional tables for '" + m + "' are smaller than the patch grid");

  const auto n = static_cast<Eigen::Index>(grid.n_patches());
  TokenSequence seq;
  seq.modality = modality;
  seq.has_cls = true;
  seq.tokens.resize(n + 1, w.cols());
  seq.tokens.row(0) = cls.row(0);
  seq.position_ids.push_back({});
  Matrix proj = grid.patches * w;
  const auto mi = static_cast<Eigen::Index>(modality);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(std::size_t(i) / grid.grid_w);
    const auto c = static_cast<Eigen::Index>(std::size_t(i) % grid.grid_w);
    seq.tokens.row(i + 1) = proj.row(i) + b.row(0) + rows.row(r) + cols.row(c) + mod.row(mi);
    seq.position_ids.push_back({int(r), int(c)});
  }
  return seq;
}

MaskPlan plan_mask(std::size_t n_patches, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie strictly between 0 and 1");
  const auto n_masked = static_cast<std::size_t>(std::llround(ratio * double(n_patches)));
  std::vector<std::size_t> idx(n_patches);
  for (std::size_t i = 0; i < n_patches; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, {0x3a5c}));
  // Partial Fisher-Yates: the first n_masked slots are a uniform sample.
  for (std::size_t i = 0; i < n_masked; ++i) std::swap(idx[i], idx[i + rng.below(n_patches - i)]);
  idx.resize(n_masked);
  MaskPlan plan = make_plan(n_patches, std::move(idx));
  plan.seed = seed;
  return plan;
}

MaskPlan make_plan(std::size_t n_patches, std::vector<std::size_t> masked) {
  std::sort(masked.begin(), masked.end());
  masked.erase(std::unique(masked.begin(), masked.end()), masked.end());
  if (!masked.empty() && masked.back() >= n_patches)
    throw DataError("mask index " + std::to_string(masked.back()) + " out of range for " +
                    std::to_string(n_patches) + " patches");
  MaskPlan plan;
  plan.n_patches = n_patches;
  plan.n_masked = masked.size();
  plan.masked_indices = std::move(masked);
  return plan;
}

TokenSequence apply_mask(const TokenSequence& tokens, const MaskPlan& plan) {
  const std::size_t offset = tokens.has_cls ? 1 : 0;
  const std::size_t n_patches = tokens.size() - offset;
  if (plan.n_patches != n_patches)
    throw DataError("mask plan covers " + std::to_string(plan.n_patches) + " patches, sequence has " +
                    std::to_string(n_patches));
  for (auto i : plan.masked_indices)
    if (i >= n_patches) throw DataError("mask index out of range");
  std::vector<Eigen::Index> keep;
  if (tokens.has_cls) keep.push_back(0);
  for (auto i : plan.visible_indices()) keep.push_back(static_cast<Eigen::Index>(i + offset));

  TokenSequence out;
  out.modality = tokens.modality;
  out.has_cls = tokens.has_cls;
  out.tokens.resize(static_cast<Eigen::Index>(keep.size()), tokens.tokens.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.tokens.row(static_cast<Eigen::Index>(k)) = tokens.tokens.row(keep[k]);
    out.position_ids.push_back(tokens.position_ids[static_cast<std::size_t>(keep[k])]);
  }
  return out;
}

}  // namespace pulsemap
