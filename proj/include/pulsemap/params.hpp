#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pulsemap/tensor.hpp"

namespace pulsemap {

/// Weight-matrix initialization. Embeddings always draw from a truncated
/// normal (sigma 0.02); biases and norm offsets start at zero, norm gains at one.
enum class InitScheme { TruncatedNormal, XavierUniform };

const char* init_scheme_name(InitScheme s);
InitScheme parse_init_scheme(const std::string& s);

/// Hyperparameters of the unified encoder/decoder. `full()` is the full-size
/// model; `desk()` is the small configuration used for tests and CI.
struct TransformerConfig {
  int d_model = 768;
  int enc_layers = 12;
  int dec_layers = 8;
  int d_decoder = 512;
  int n_heads_enc = 12;
  int n_heads_dec = 8;
  double mlp_ratio = 4.0;
  int image_size = 224;
  int patch_size = 16;
  double mask_ratio = 0.75;
  double lambda_m = 0.4;
  double lambda_c = 1.0;
  int n_classes = 2;
  int head_hidden = 0;  // 0 -> d_model
  bool strict_eq5 = false;  // contrastive loss -y log p instead of full BCE
  double layer_norm_eps = 1e-6;
  InitScheme init = InitScheme::TruncatedNormal;

  static TransformerConfig full() { return {}; }
  static TransformerConfig desk();

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int mlp_hidden(int width) const { return static_cast<int>(mlp_ratio * width + 0.5); }
  int classifier_hidden() const { return head_hidden > 0 ? head_hidden : d_model; }

  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

/// Optimizer treatment of a tensor: weight decay applies to Weight and
/// Embedding roles only.
enum class ParamRole { Weight, Bias, Norm, Embedding };

struct ParamEntry {
  std::string name;
  Matrix value;
  ParamRole role = ParamRole::Weight;
};

struct ManifestItem {
  std::string name;
  std::vector<std::int64_t> shape;
};

/// Ordered named tensors. Iteration order is registration order and is the
/// order used by checkpoints and optimizer state.
class ParamStore {
 public:
  Matrix& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, ParamRole role);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws ConfigError naming the tensor when absent.
  const Matrix& get(const std::string& name) const;
  Matrix& get(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;

  std::vector<ManifestItem> manifest() const;
  ParamStore zeros_like() const;
  void set_zero();
  /// Throws NumericsError naming the first tensor holding a non-finite value.
  void check_finite(const std::string& what) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Registers every tensor of the model with deterministic seeded init
/// following `config.init`.
ParamStore init_params(const TransformerConfig& config, std::uint64_t seed);

/// Same layout as init_params with every tensor zero.
ParamStore zero_params(const TransformerConfig& config);

/// Re-draws the classifier head tensors (used at the start of fine-tuning).
void reinit_classifier(ParamStore& params, std::uint64_t seed, InitScheme scheme);

/// Throws ConfigError when the store's manifest differs from what `config` implies.
void validate_manifest(const ParamStore& params, const TransformerConfig& config);

}  // namespace pulsemap
