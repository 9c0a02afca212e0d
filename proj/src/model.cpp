#include "pulsemap/model.hpp"

#include <algorithm>
#include <cmath>

#include "pulsemap/error.hpp"
#include "pulsemap/layers.hpp"

namespace pulsemap {

namespace {

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void check_width(const Matrix& m, int width, const char* what) {
  if (m.cols() != width)
    throw ConfigError(std::string(what) + " has width " + std::to_string(m.cols()) + ", expected " +
                      std::to_string(width));
}

// One stream's patches selected for the encoder (all of them, or the visible ones).
struct StreamInput {
  const PatchGrid* grid = nullptr;
  InputModality modality = InputModality::Face;
  std::vector<std::size_t> patches;
};

Matrix embed_rows(const StreamInput& in, const ParamStore& p) {
  const std::string m = stream_prefix(in.modality);
  const Matrix& w = p.get(m + ".patch_proj.w");
  const Matrix& b = p.get(m + ".patch_proj.b");
  const Matrix& rows = p.get(m + ".row_embed");
  const Matrix& cols = p.get(m + ".col_embed");
  const auto mod = p.get("modality_embed").row(static_cast<Eigen::Index>(in.modality));
  if (w.rows() != in.grid->patches.cols())
    throw ConfigError("patch width " + std::to_string(in.grid->patches.cols()) + " does not match '" +
                      m + ".patch_proj.w'");
  Matrix out(idx(in.patches.size()), w.cols());
  for (std::size_t k = 0; k < in.patches.size(); ++k) {
    const std::size_t i = in.patches[k];
    const auto r = idx(i / in.grid->grid_w), c = idx(i % in.grid->grid_w);
    out.row(idx(k)) = in.grid->patches.row(idx(i)) * w + b.row(0) + rows.row(r) + cols.row(c) + mod;
  }
  return out;
}

void embed_backward(const Matrix& dtok, const StreamInput& in, ParamStore& g) {
  const std::string m = stream_prefix(in.modality);
  Matrix& dw = g.get(m + ".patch_proj.w");
  Matrix& db = g.get(m + ".patch_proj.b");
  Matrix& drows = g.get(m + ".row_embed");
  Matrix& dcols = g.get(m + ".col_embed");
  auto dmod = g.get("modality_embed").row(static_cast<Eigen::Index>(in.modality));
  for (std::size_t k = 0; k < in.patches.size(); ++k) {
    const std::size_t i = in.patches[k];
    const auto d = dtok.row(idx(k));
    dw.noalias() += in.grid->patches.row(idx(i)).transpose() * d;
    db.row(0) += d;
    drows.row(idx(i / in.grid->grid_w)) += d;
    dcols.row(idx(i % in.grid->grid_w)) += d;
    dmod += d;
  }
}

struct EncoderPass {
  StreamInput face, bio;
  std::vector<nn::BlockCache> caches;
  Matrix hidden;
};

void run_encoder(EncoderPass& pass, const ParamStore& p, const TransformerConfig& c) {
  const Matrix ef = embed_rows(pass.face, p);
  const Matrix eb = embed_rows(pass.bio, p);
  Matrix x(1 + ef.rows() + eb.rows(), c.d_model);
  x.row(0) = p.get("cls").row(0);
  x.middleRows(1, ef.rows()) = ef;
  x.middleRows(1 + ef.rows(), eb.rows()) = eb;
  pass.hidden = nn::stack(x, p, "enc", c.enc_layers, c.n_heads_enc, c.layer_norm_eps, pass.caches);
}

void backward_encoder(const Matrix& dhidden, const EncoderPass& pass, const ParamStore& p,
                      ParamStore& g, const TransformerConfig& c) {
  const Matrix dx = nn::stack_backward(dhidden, p, g, "enc", c.n_heads_enc, pass.caches);
  g.get("cls").row(0) += dx.row(0);
  const auto nf = idx(pass.face.patches.size());
  const auto nb = idx(pass.bio.patches.size());
  embed_backward(dx.middleRows(1, nf), pass.face, g);
  embed_backward(dx.middleRows(1 + nf, nb), pass.bio, g);
}

struct DecoderPass {
  InputModality modality = InputModality::Face;
  const MaskPlan* plan = nullptr;
  std::vector<std::size_t> visible;
  Matrix encoded_visible;
  std::vector<nn::BlockCache> caches;
  nn::LayerNormCache norm;
  Matrix normed;
  Matrix recon;
};

DecoderPass decoder_pass(InputModality modality, const MaskPlan* plan, std::vector<std::size_t> visible,
                         Matrix encoded_visible) {
  DecoderPass d;
  d.modality = modality;
  d.plan = plan;
  d.visible = std::move(visible);
  d.encoded_visible = std::move(encoded_visible);
  return d;
}

Matrix assemble(const Matrix& encoded_visible, const MaskPlan& plan,
                const std::vector<std::size_t>& visible, InputModality modality, const ParamStore& p,
                const TransformerConfig& c) {
  const std::string m = stream_prefix(modality);
  const std::size_t grid_w = static_cast<std::size_t>(c.grid());
  if (plan.n_patches != static_cast<std::size_t>(c.n_patches()))
    throw DataError("mask plan covers " + std::to_string(plan.n_patches) + " patches, the " + m +
                    " grid has " + std::to_string(c.n_patches()));
  if (encoded_visible.rows() != idx(visible.size()))
    throw DataError("decoder input has " + std::to_string(encoded_visible.rows()) +
                    " visible states, plan leaves " + std::to_string(visible.size()));
  check_width(encoded_visible, c.d_model, "encoded stream");
  const Matrix bridged = nn::linear(encoded_visible, p.get("dec_bridge.w"), p.get("dec_bridge.b"));
  const Matrix& rows = p.get(m + ".dec_row_embed");
  const Matrix& cols = p.get(m + ".dec_col_embed");
  const auto mask = p.get("mask_token").row(0);
  Matrix out(idx(plan.n_patches), c.d_decoder);
  std::size_t v = 0;
  for (std::size_t i = 0; i < plan.n_patches; ++i) {
    if (v < visible.size() && visible[v] == i)
      out.row(idx(i)) = bridged.row(idx(v++));
    else
      out.row(idx(i)) = mask;
    out.row(idx(i)) += rows.row(idx(i / grid_w)) + cols.row(idx(i % grid_w));
  }
  return out;
}

void run_decoder(DecoderPass& d, const ParamStore& p, const TransformerConfig& c) {
  const std::string m = stream_prefix(d.modality);
  const Matrix in = assemble(d.encoded_visible, *d.plan, d.visible, d.modality, p, c);
  const Matrix z = nn::stack(in, p, "dec", c.dec_layers, c.n_heads_dec, c.layer_norm_eps, d.caches);
  d.normed = nn::layer_norm(z, p.get("dec.norm.g"), p.get("dec.norm.b"), c.layer_norm_eps, d.norm);
  d.recon = nn::linear(d.normed, p.get(m + ".dec_head.w"), p.get(m + ".dec_head.b"));
}

// Returns the gradient with respect to the encoded visible states.
Matrix backward_decoder(const Matrix& drecon, const DecoderPass& d, const ParamStore& p,
                        ParamStore& g, const TransformerConfig& c) {
  const std::string m = stream_prefix(d.modality);
  const Matrix dnormed = nn::linear_backward(d.normed, p.get(m + ".dec_head.w"), drecon,
                                             g.get(m + ".dec_head.w"), g.get(m + ".dec_head.b"));
  const Matrix dz = nn::layer_norm_backward(dnormed, p.get("dec.norm.g"), d.norm, g.get("dec.norm.g"),
                                            g.get("dec.norm.b"));
  const Matrix din = nn::stack_backward(dz, p, g, "dec", c.n_heads_dec, d.caches);
  const std::size_t grid_w = static_cast<std::size_t>(c.grid());
  Matrix& drows = g.get(m + ".dec_row_embed");
  Matrix& dcols = g.get(m + ".dec_col_embed");
  auto dmask = g.get("mask_token").row(0);
  Matrix dbridged(idx(d.visible.size()), c.d_decoder);
  std::size_t v = 0;
  for (std::size_t i = 0; i < d.plan->n_patches; ++i) {
    const auto row = din.row(idx(i));
    drows.row(idx(i / grid_w)) += row;
    dcols.row(idx(i % grid_w)) += row;
    if (v < d.visible.size() && d.visible[v] == i)
      dbridged.row(idx(v++)) = row;
    else
      dmask += row;
  }
  return nn::linear_backward(d.encoded_visible, p.get("dec_bridge.w"), dbridged,
                             g.get("dec_bridge.w"), g.get("dec_bridge.b"));
}

double masked_sse(const Matrix& recon, const PatchGrid& target, const MaskPlan& plan) {
  if (plan.n_masked == 0) throw DataError("reconstruction loss needs at least one masked patch");
  if (recon.rows() != target.patches.rows() || recon.cols() != target.patches.cols())
    throw DataError("reconstruction shape does not match the target patches");
  double sum = 0.0;
  for (auto i : plan.masked_indices) sum += (recon.row(idx(i)) - target.patches.row(idx(i))).squaredNorm();
  return sum / double(plan.n_masked);
}

Matrix masked_sse_grad(const Matrix& recon, const PatchGrid& target, const MaskPlan& plan,
                       double scale) {
  Matrix d = Matrix::Zero(recon.rows(), recon.cols());
  const double k = 2.0 * scale / double(plan.n_masked);
  for (auto i : plan.masked_indices)
    d.row(idx(i)) = k * (recon.row(idx(i)) - target.patches.row(idx(i)));
  return d;
}

struct ClassifierPass {
  RowVector h, pre, act, logits;
};

void run_classifier(ClassifierPass& cp, const ParamStore& p) {
  cp.pre = nn::linear(cp.h, p.get("cls_head.fc1.w"), p.get("cls_head.fc1.b"));
  cp.act = nn::gelu(cp.pre);
  cp.logits = nn::linear(cp.act, p.get("cls_head.fc2.w"), p.get("cls_head.fc2.b"));
}

RowVector backward_classifier(const RowVector& dlogits, const ClassifierPass& cp, const ParamStore& p,
                              ParamStore& g) {
  Matrix dact = nn::linear_backward(cp.act, p.get("cls_head.fc2.w"), dlogits, g.get("cls_head.fc2.w"),
                                    g.get("cls_head.fc2.b"));
  for (Eigen::Index i = 0; i < dact.cols(); ++i) dact(0, i) *= nn::gelu_grad(cp.pre(0, i));
  return nn::linear_backward(cp.h, p.get("cls_head.fc1.w"), dact, g.get("cls_head.fc1.w"),
                             g.get("cls_head.fc1.b"));
}

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericsError(name, std::string("loss term '") + name + "' is not finite");
}

GradientResult run(LossKind kind, const Batch& batch, const ParamStore& p, const TransformerConfig& c,
                   bool need_grad, bool freeze_encoder) {
  c.validate();
  GradientResult res;
  if (need_grad) res.grads = p.zeros_like();
  ParamStore& g = res.grads;

  if (kind == LossKind::Pretrain) {
    const auto& samples = batch.pretrain;
    if (samples.empty()) throw DataError("pretraining batch is empty");
    std::size_t n_pos = 0;
    for (const auto& s : samples) n_pos += s.label == 1;

    if (c.lambda_m > 0.0 && n_pos > 0) {
      const double w = c.lambda_m / double(n_pos);
      for (const auto& s : samples) {
        if (s.label != 1) continue;
        EncoderPass enc;
        enc.face = {&s.face, InputModality::Face, s.face_plan.visible_indices()};
        enc.bio = {&s.bio, InputModality::Biosensor, s.bio_plan.visible_indices()};
        run_encoder(enc, p, c);
        const auto nf = idx(enc.face.patches.size());
        const auto nb = idx(enc.bio.patches.size());
        DecoderPass df = decoder_pass(InputModality::Face, &s.face_plan, enc.face.patches, enc.hidden.middleRows(1, nf));
        DecoderPass db = decoder_pass(InputModality::Biosensor, &s.bio_plan, enc.bio.patches, enc.hidden.middleRows(1 + nf, nb));
        run_decoder(df, p, c);
        run_decoder(db, p, c);
        const double loss = masked_sse(df.recon, s.face, s.face_plan) + masked_sse(db.recon, s.bio, s.bio_plan);
        require_finite(loss, "l_m");
        res.l_m += loss / double(n_pos);
        if (!need_grad) continue;
        Matrix dhidden = Matrix::Zero(enc.hidden.rows(), enc.hidden.cols());
        dhidden.middleRows(1, nf) =
            backward_decoder(masked_sse_grad(df.recon, s.face, s.face_plan, w), df, p, g, c);
        dhidden.middleRows(1 + nf, nb) =
            backward_decoder(masked_sse_grad(db.recon, s.bio, s.bio_plan, w), db, p, g, c);
        backward_encoder(dhidden, enc, p, g, c);
      }
    } else if (n_pos > 0) {
      // Weight is zero: report the term without spending a backward pass on it.
      for (const auto& s : samples)
        if (s.label == 1) {
          auto r = reconstruct(s, p, c);
          res.l_m += (masked_sse(r.face, s.face, s.face_plan) + masked_sse(r.bio, s.bio, s.bio_plan)) /
                     double(n_pos);
        }
    }

    const double wc = c.lambda_c / double(samples.size());
    for (const auto& s : samples) {
      EncoderPass enc;
      enc.face = {&s.face, InputModality::Face, all_indices(s.face.n_patches())};
      enc.bio = {&s.bio, InputModality::Biosensor, all_indices(s.bio.n_patches())};
      run_encoder(enc, p, c);
      const RowVector h = enc.hidden.row(0);
      const double prob = matching_probability(h, p);
      const double loss = contrastive_loss(prob, s.label, c.strict_eq5);
      require_finite(loss, "l_c");
      res.l_c += loss / double(samples.size());
      if (!need_grad || c.lambda_c == 0.0) continue;
      // d loss / d logit; zero where the probability clamp is active.
      double dz = 0.0;
      const bool clamped = prob < kProbClamp || prob > 1.0 - kProbClamp;
      if (!clamped) dz = c.strict_eq5 ? (s.label == 1 ? prob - 1.0 : 0.0) : prob - double(s.label);
      dz *= wc;
      Matrix dh = nn::linear_backward(h, p.get("match_head.w"), Matrix::Constant(1, 1, dz),
                                      g.get("match_head.w"), g.get("match_head.b"));
      Matrix dhidden = Matrix::Zero(enc.hidden.rows(), enc.hidden.cols());
      dhidden.row(0) = dh.row(0);
      backward_encoder(dhidden, enc, p, g, c);
    }
    res.total = pretrain_loss(res.l_m, res.l_c, c);
  } else {
    const auto& samples = batch.finetune;
    if (samples.empty()) throw DataError("fine-tuning batch is empty");
    const double w = 1.0 / double(samples.size());
    for (const auto& s : samples) {
      if (s.label < 0 || s.label >= c.n_classes)
        throw DataError("class label " + std::to_string(s.label) + " out of range");
      EncoderPass enc;
      enc.face = {&s.face, InputModality::Face, all_indices(s.face.n_patches())};
      enc.bio = {&s.bio, InputModality::Biosensor, all_indices(s.bio.n_patches())};
      run_encoder(enc, p, c);
      ClassifierPass cp;
      cp.h = enc.hidden.row(0);
      run_classifier(cp, p);
      const double loss = softmax_cross_entropy(cp.logits, s.label);
      require_finite(loss, "l_ft");
      res.l_ft += loss * w;
      if (!need_grad) continue;
      RowVector dlogits = softmax(cp.logits);
      dlogits(s.label) -= 1.0;
      dlogits *= w;
      const RowVector dh = backward_classifier(dlogits, cp, p, g);
      if (freeze_encoder) continue;
      Matrix dhidden = Matrix::Zero(enc.hidden.rows(), enc.hidden.cols());
      dhidden.row(0) = dh;
      backward_encoder(dhidden, enc, p, g, c);
    }
    res.total = res.l_ft;
  }
  require_finite(res.total, "total");
  if (need_grad) res.grads.check_finite("gradient");
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------

HiddenStates encoder_forward(const TokenSequence& face, const TokenSequence& bio,
                             const ParamStore& params, const TransformerConfig& config) {
  config.validate();
  check_width(face.tokens, config.d_model, "face tokens");
  check_width(bio.tokens, config.d_model, "biosensor tokens");
  const Eigen::Index f0 = face.has_cls ? 1 : 0, b0 = bio.has_cls ? 1 : 0;
  const Eigen::Index nf = face.tokens.rows() - f0, nb = bio.tokens.rows() - b0;
  Matrix x(1 + nf + nb, config.d_model);
  if (face.has_cls)
    x.row(0) = face.tokens.row(0);
  else if (bio.has_cls)
    x.row(0) = bio.tokens.row(0);
  else
    x.row(0) = params.get("cls").row(0);
  x.middleRows(1, nf) = face.tokens.middleRows(f0, nf);
  x.middleRows(1 + nf, nb) = bio.tokens.middleRows(b0, nb);
  std::vector<nn::BlockCache> caches;
  HiddenStates out;
  out.values = nn::stack(x, params, "enc", config.enc_layers, config.n_heads_enc,
                         config.layer_norm_eps, caches);
  out.face_begin = 1;
  out.face_count = static_cast<std::size_t>(nf);
  out.bio_begin = 1 + static_cast<std::size_t>(nf);
  out.bio_count = static_cast<std::size_t>(nb);
  return out;
}

Matrix assemble_decoder_input(const Matrix& encoded_visible, const MaskPlan& plan,
                              InputModality modality, const ParamStore& params,
                              const TransformerConfig& config) {
  for (auto i : plan.masked_indices)
    if (i >= plan.n_patches) throw DataError("mask plan index out of range");
  return assemble(encoded_visible, plan, plan.visible_indices(), modality, params, config);
}

Matrix decoder_forward(const Matrix& decoder_tokens, InputModality modality, const ParamStore& params,
                       const TransformerConfig& config) {
  check_width(decoder_tokens, config.d_decoder, "decoder tokens");
  std::vector<nn::BlockCache> caches;
  const Matrix z = nn::stack(decoder_tokens, params, "dec", config.dec_layers, config.n_heads_dec,
                             config.layer_norm_eps, caches);
  nn::LayerNormCache norm;
  const Matrix n = nn::layer_norm(z, params.get("dec.norm.g"), params.get("dec.norm.b"),
                                  config.layer_norm_eps, norm);
  const std::string m = stream_prefix(modality);
  return nn::linear(n, params.get(m + ".dec_head.w"), params.get(m + ".dec_head.b"));
}

double mae_loss(const Matrix& recon_face, const Matrix& recon_bio, const PatchGrid& target_face,
                const PatchGrid& target_bio, const MaskPlan& plan_face, const MaskPlan& plan_bio) {
  return masked_sse(recon_bio, target_bio, plan_bio) + masked_sse(recon_face, target_face, plan_face);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double matching_logit(const RowVector& cls_hidden, const ParamStore& params) {
  const Matrix& w = params.get("match_head.w");
  if (w.rows() != cls_hidden.cols()) throw ConfigError("match_head.w does not match the hidden width");
  return (cls_hidden * w)(0, 0) + params.get("match_head.b")(0, 0);
}

double matching_probability(const RowVector& cls_hidden, const ParamStore& params) {
  return sigmoid(matching_logit(cls_hidden, params));
}

double contrastive_loss(double p, int y, bool strict) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (strict) return y == 1 ? -std::log(q) : 0.0;
  return -(double(y) * std::log(q) + double(1 - y) * std::log(1.0 - q));
}

double pretrain_loss(double l_m, double l_c, const TransformerConfig& config) {
  return config.lambda_m * l_m + config.lambda_c * l_c;
}

RowVector classifier_forward(const RowVector& cls_hidden, const ParamStore& params, int n_classes) {
  ClassifierPass cp;
  cp.h = cls_hidden;
  run_classifier(cp, params);
  if (cp.logits.cols() != n_classes)
    throw ConfigError("classifier head has " + std::to_string(cp.logits.cols()) + " outputs, expected " +
                      std::to_string(n_classes));
  return cp.logits;
}

RowVector softmax(const RowVector& logits) {
  const double mx = logits.maxCoeff();
  RowVector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

double softmax_cross_entropy(const RowVector& logits, int label) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(label);
}

GradientResult compute_gradients(LossKind kind, const Batch& batch, const ParamStore& params,
                                 const TransformerConfig& config, bool freeze_encoder) {
  return run(kind, batch, params, config, true, freeze_encoder);
}

double evaluate_loss(LossKind kind, const Batch& batch, const ParamStore& params,
                     const TransformerConfig& config) {
  return run(kind, batch, params, config, false, false).total;
}

RowVector encode_cls(const PatchGrid& face, const PatchGrid& bio, const ParamStore& params,
                     const TransformerConfig& config) {
  EncoderPass enc;
  enc.face = {&face, InputModality::Face, all_indices(face.n_patches())};
  enc.bio = {&bio, InputModality::Biosensor, all_indices(bio.n_patches())};
  run_encoder(enc, params, config);
  return enc.hidden.row(0);
}

Reconstruction reconstruct(const PretrainSample& s, const ParamStore& p, const TransformerConfig& c) {
  EncoderPass enc;
  enc.face = {&s.face, InputModality::Face, s.face_plan.visible_indices()};
  enc.bio = {&s.bio, InputModality::Biosensor, s.bio_plan.visible_indices()};
  run_encoder(enc, p, c);
  const auto nf = idx(enc.face.patches.size());
  const auto nb = idx(enc.bio.patches.size());
  DecoderPass df = decoder_pass(InputModality::Face, &s.face_plan, enc.face.patches, enc.hidden.middleRows(1, nf));
  DecoderPass db = decoder_pass(InputModality::Biosensor, &s.bio_plan, enc.bio.patches, enc.hidden.middleRows(1 + nf, nb));
  run_decoder(df, p, c);
  run_decoder(db, p, c);
  return {df.recon, db.recon};
}

}  // namespace pulsemap
