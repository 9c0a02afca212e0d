#pragma once

#include <cstddef>
#include <vector>

#include "pulsemap/params.hpp"
#include "pulsemap/patch_embed.hpp"
#include "pulsemap/tensor.hpp"

namespace pulsemap {

/// Encoder output over [CLS | face tokens | biosensor tokens].
struct HiddenStates {
  Matrix values;
  std::size_t face_begin = 1;
  std::size_t face_count = 0;
  std::size_t bio_begin = 1;
  std::size_t bio_count = 0;

  RowVector cls() const { return values.row(0); }
  Matrix face() const { return values.middleRows(Eigen::Index(face_begin), Eigen::Index(face_count)); }
  Matrix bio() const { return values.middleRows(Eigen::Index(bio_begin), Eigen::Index(bio_count)); }
};

/// Shared encoder over the concatenated streams. The CLS row is taken from the
/// face sequence (or the biosensor one) when present, else from `cls`.
HiddenStates encoder_forward(const TokenSequence& face, const TokenSequence& bio,
                             const ParamStore& params, const TransformerConfig& config);

/// Full-grid decoder input: visible slots carry projected encoder outputs,
/// masked slots the [MASK] vector; decoder positional tables are added to all.
Matrix assemble_decoder_input(const Matrix& encoded_visible, const MaskPlan& plan,
                              InputModality modality, const ParamStore& params,
                              const TransformerConfig& config);

/// Decoder blocks, final norm and the stream's prediction head.
Matrix decoder_forward(const Matrix& decoder_tokens, InputModality modality,
                       const ParamStore& params, const TransformerConfig& config);

/// Masked-patch reconstruction loss: per stream, the squared error summed over
/// each masked patch vector, averaged over the masked count; streams added.
double mae_loss(const Matrix& recon_face, const Matrix& recon_bio, const PatchGrid& target_face,
                const PatchGrid& target_bio, const MaskPlan& plan_face, const MaskPlan& plan_bio);

double sigmoid(double z);
double matching_logit(const RowVector& cls_hidden, const ParamStore& params);
double matching_probability(const RowVector& cls_hidden, const ParamStore& params);

inline constexpr double kProbClamp = 1e-7;

/// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]. `strict` keeps
/// only the positive term, -y log p.
double contrastive_loss(double p, int y, bool strict = false);

double pretrain_loss(double l_m, double l_c, const TransformerConfig& config);

/// Two-layer MLP head on the CLS state: fc2(gelu(fc1(h))).
RowVector classifier_forward(const RowVector& cls_hidden, const ParamStore& params, int n_classes);
RowVector softmax(const RowVector& logits);
double softmax_cross_entropy(const RowVector& logits, int label);

// ---------------------------------------------------------------------------
// Gradients

struct PretrainSample {
  PatchGrid face;
  PatchGrid bio;
  int label = 1;  // 1 = aligned pair
  MaskPlan face_plan;
  MaskPlan bio_plan;
};

struct FinetuneSample {
  PatchGrid face;
  PatchGrid bio;
  int label = 0;
};

enum class LossKind { Pretrain, Finetune };

/// Either list may be empty; the one matching the requested loss is used.
struct Batch {
  std::vector<PretrainSample> pretrain;
  std::vector<FinetuneSample> finetune;
};

struct GradientResult {
  ParamStore grads;
  double l_m = 0.0;     // mean masked-autoencoding loss over aligned samples
  double l_c = 0.0;     // mean contrastive loss over all samples
  double l_ft = 0.0;    // mean fine-tuning cross-entropy
  double total = 0.0;   // the objective the gradients belong to
};

/// Pretrain: MAE pass on aligned samples (masked inputs) and a separate
/// unmasked matching pass on every sample, combined with lambda_m/lambda_c. A
/// zero weight skips its pass. Finetune: mean cross-entropy of the MLP head.
/// Throws NumericsError when a loss or gradient is non-finite.
GradientResult compute_gradients(LossKind kind, const Batch& batch, const ParamStore& params,
                                 const TransformerConfig& config, bool freeze_encoder = false);

/// Loss only, same definition as `compute_gradients(...).total`.
double evaluate_loss(LossKind kind, const Batch& batch, const ParamStore& params,
                     const TransformerConfig& config);

/// Encoder pass on unmasked inputs; returns the CLS hidden state.
RowVector encode_cls(const PatchGrid& face, const PatchGrid& bio, const ParamStore& params,
                     const TransformerConfig& config);

/// Reconstructions of both streams for one aligned sample.
struct Reconstruction {
  Matrix face;
  Matrix bio;
};
Reconstruction reconstruct(const PretrainSample& sample, const ParamStore& params,
                           const TransformerConfig& config);

}  // namespace pulsemap
