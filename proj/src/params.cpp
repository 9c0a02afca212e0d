#include "pulsemap/params.hpp"

#include <cmath>
#include <functional>

#include "pulsemap/error.hpp"
#include "pulsemap/rng.hpp"

namespace pulsemap {

TransformerConfig TransformerConfig::desk() {
  TransformerConfig c;
  c.d_model = 64;
  c.enc_layers = 2;
  c.dec_layers = 1;
  c.d_decoder = 64;
  c.n_heads_enc = 4;
  c.n_heads_dec = 4;
  c.image_size = 32;
  c.patch_size = 8;
  c.init = InitScheme::XavierUniform;
  return c;
}

const char* init_scheme_name(InitScheme s) {
  return s == InitScheme::XavierUniform ? "xavier" : "trunc_normal";
}

InitScheme parse_init_scheme(const std::string& s) {
  if (s == "xavier") return InitScheme::XavierUniform;
  if (s == "trunc_normal") return InitScheme::TruncatedNormal;
  throw ConfigError("unknown init scheme '" + s + "' (expected trunc_normal|xavier)");
}

void TransformerConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (d_model <= 0 || d_decoder <= 0) fail("model widths must be positive");
  if (enc_layers < 0 || dec_layers < 0) fail("layer counts must be non-negative");
  if (n_heads_enc <= 0 || d_model % n_heads_enc != 0) fail("d_model must be divisible by n_heads_enc");
  if (n_heads_dec <= 0 || d_decoder % n_heads_dec != 0)
    fail("d_decoder must be divisible by n_heads_dec");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
    fail("image_size must be a positive multiple of patch_size");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie strictly between 0 and 1");
  if (!(lambda_m >= 0.0) || !(lambda_c >= 0.0)) fail("loss weights must be non-negative");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (head_hidden < 0) fail("head_hidden must be non-negative");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

// ---------------------------------------------------------------------------

Matrix& ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                        ParamRole role) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, Matrix::Zero(rows, cols), role});
  return entries_.back().value;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter tensor '" + name + "'");
  return entries_[it->second];
}

const Matrix& ParamStore::get(const std::string& name) const { return entry(name).value; }

Matrix& ParamStore::get(const std::string& name) {
  return const_cast<Matrix&>(static_cast<const ParamStore*>(this)->get(name));
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

std::vector<ManifestItem> ParamStore::manifest() const {
  std::vector<ManifestItem> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e.name, {e.value.rows(), e.value.cols()}});
  return out;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (const auto& e : entries_) z.add(e.name, e.value.rows(), e.value.cols(), e.role);
  return z;
}

void ParamStore::set_zero() {
  for (auto& e : entries_) e.value.setZero();
}

void ParamStore::check_finite(const std::string& what) const {
  for (const auto& e : entries_)
    if (!e.value.allFinite()) throw NumericsError(e.name, what + ": non-finite values in '" + e.name + "'");
}

// ---------------------------------------------------------------------------

namespace {

const char* kStreams[] = {"face", "bio"};

using AddFn = std::function<void(const std::string&, Eigen::Index, Eigen::Index, ParamRole)>;

void add_block(const AddFn& add, const std::string& prefix, int width, int hidden) {
  add(prefix + "ln1.g", 1, width, ParamRole::Norm);
  add(prefix + "ln1.b", 1, width, ParamRole::Norm);
  for (const char* proj : {"wq", "wk", "wv", "wo"}) {
    add(prefix + "attn." + proj, width, width, ParamRole::Weight);
    add(prefix + "attn.b" + std::string(proj + 1), 1, width, ParamRole::Bias);
  }
  add(prefix + "ln2.g", 1, width, ParamRole::Norm);
  add(prefix + "ln2.b", 1, width, ParamRole::Norm);
  add(prefix + "mlp.fc1.w", width, hidden, ParamRole::Weight);
  add(prefix + "mlp.fc1.b", 1, hidden, ParamRole::Bias);
  add(prefix + "mlp.fc2.w", hidden, width, ParamRole::Weight);
  add(prefix + "mlp.fc2.b", 1, width, ParamRole::Bias);
}

// Single source of truth for tensor names, shapes and order.
void layout(const TransformerConfig& c, const AddFn& add) {
  const int d = c.d_model, dd = c.d_decoder, g = c.grid(), pd = c.patch_dim();
  add("cls", 1, d, ParamRole::Embedding);
  add("modality_embed", 2, d, ParamRole::Embedding);
  for (const char* s : kStreams) {
    const std::string m = s;
    add(m + ".patch_proj.w", pd, d, ParamRole::Weight);
    add(m + ".patch_proj.b", 1, d, ParamRole::Bias);
    add(m + ".row_embed", g, d, ParamRole::Embedding);
    add(m + ".col_embed", g, d, ParamRole::Embedding);
  }
  for (int l = 0; l < c.enc_layers; ++l)
    add_block(add, "enc." + std::to_string(l) + ".", d, c.mlp_hidden(d));
  add("dec_bridge.w", d, dd, ParamRole::Weight);
  add("dec_bridge.b", 1, dd, ParamRole::Bias);
  add("mask_token", 1, dd, ParamRole::Embedding);
  for (const char* s : kStreams) {
    const std::string m = s;
    add(m + ".dec_row_embed", g, dd, ParamRole::Embedding);
    add(m + ".dec_col_embed", g, dd, ParamRole::Embedding);
  }
  for (int l = 0; l < c.dec_layers; ++l)
    add_block(add, "dec." + std::to_string(l) + ".", dd, c.mlp_hidden(dd));
  add("dec.norm.g", 1, dd, ParamRole::Norm);
  add("dec.norm.b", 1, dd, ParamRole::Norm);
  for (const char* s : kStreams) {
    const std::string m = s;
    add(m + ".dec_head.w", dd, pd, ParamRole::Weight);
    add(m + ".dec_head.b", 1, pd, ParamRole::Bias);
  }
  add("match_head.w", d, 1, ParamRole::Weight);
  add("match_head.b", 1, 1, ParamRole::Bias);
  const int h = c.classifier_hidden();
  add("cls_head.fc1.w", d, h, ParamRole::Weight);
  add("cls_head.fc1.b", 1, h, ParamRole::Bias);
  add("cls_head.fc2.w", h, c.n_classes, ParamRole::Weight);
  add("cls_head.fc2.b", 1, c.n_classes, ParamRole::Bias);
}

void fill(ParamEntry& e, InitScheme scheme, Rng& rng) {
  switch (e.role) {
    case ParamRole::Weight: {
      if (scheme == InitScheme::TruncatedNormal) {
        for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = rng.truncated_normal(0.02);
        break;
      }
      const double lim = std::sqrt(6.0 / double(e.value.rows() + e.value.cols()));
      for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = rng.uniform(-lim, lim);
      break;
    }
    case ParamRole::Embedding:
      for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = rng.truncated_normal(0.02);
      break;
    case ParamRole::Bias: e.value.setZero(); break;
    case ParamRole::Norm:
      // Gains end in ".g", offsets in ".b".
      if (e.name.size() >= 2 && e.name.compare(e.name.size() - 2, 2, ".g") == 0)
        e.value.setOnes();
      else
        e.value.setZero();
      break;
  }
}

bool is_classifier(const std::string& name) { return name.rfind("cls_head.", 0) == 0; }

}  // namespace

ParamStore zero_params(const TransformerConfig& c) {
  c.validate();
  ParamStore p;
  layout(c, [&](const std::string& name, Eigen::Index r, Eigen::Index k, ParamRole role) {
    p.add(name, r, k, role);
  });
  return p;
}

ParamStore init_params(const TransformerConfig& c, std::uint64_t seed) {
  ParamStore p = zero_params(c);
  Rng rng(derive_seed(seed, {0x1417}));
  for (auto& e : p.entries()) fill(e, c.init, rng);
  return p;
}

void reinit_classifier(ParamStore& params, std::uint64_t seed, InitScheme scheme) {
  Rng rng(derive_seed(seed, {0xc1a55}));
  for (auto& e : params.entries())
    if (is_classifier(e.name)) fill(e, scheme, rng);
}

void validate_manifest(const ParamStore& params, const TransformerConfig& config) {
  config.validate();
  std::vector<ManifestItem> expected;
  layout(config, [&](const std::string& name, Eigen::Index r, Eigen::Index k, ParamRole) {
    expected.push_back({name, {r, k}});
  });
  const auto actual = params.manifest();
  if (expected.size() != actual.size())
    throw ConfigError("checkpoint has " + std::to_string(actual.size()) + " tensors, config expects " +
                      std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != actual[i].name)
      throw ConfigError("checkpoint tensor " + std::to_string(i) + " is '" + actual[i].name +
                        "', config expects '" + expected[i].name + "'");
    if (expected[i].shape != actual[i].shape)
      throw ConfigError("shape mismatch for '" + actual[i].name + "'");
  }
}

}  // namespace pulsemap
