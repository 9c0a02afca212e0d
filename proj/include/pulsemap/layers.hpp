#pragma once

#include <string>
#include <vector>

#include "pulsemap/params.hpp"
#include "pulsemap/tensor.hpp"

// Forward/backward pairs for the transformer building blocks. Every forward
// records what its backward needs in a cache; every backward accumulates
// (+=) into the gradient store so shared tensors sum their contributions.
namespace pulsemap::nn {

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b);
/// Accumulates dW, db; returns dx.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db);

double gelu(double x);
double gelu_grad(double x);
Matrix gelu(const Matrix& x);

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                  LayerNormCache& cache);
Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache,
                           Matrix& dgain, Matrix& dbias);

struct AttentionCache {
  Matrix x, q, k, v, concat;
  std::vector<Matrix> probs;  // one n x n matrix per head
};

/// Bidirectional multi-head self-attention with tensors under `prefix + "attn."`.
Matrix attention(const Matrix& x, const ParamStore& p, const std::string& prefix, int n_heads,
                 AttentionCache& cache);
Matrix attention_backward(const Matrix& dy, const ParamStore& p, ParamStore& grads,
                          const std::string& prefix, int n_heads, const AttentionCache& cache);

struct BlockCache {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  Matrix ln2_out, fc1_pre, fc1_act;
};

/// Pre-norm block: h = x + attn(ln1(x)); y = h + fc2(gelu(fc1(ln2(h)))).
Matrix block(const Matrix& x, const ParamStore& p, const std::string& prefix, int n_heads,
             double eps, BlockCache& cache);
Matrix block_backward(const Matrix& dy, const ParamStore& p, ParamStore& grads,
                      const std::string& prefix, int n_heads, const BlockCache& cache);

/// Runs `n_layers` blocks named `<stack>.<l>.` in order.
Matrix stack(const Matrix& x, const ParamStore& p, const std::string& stack_name, int n_layers,
             int n_heads, double eps, std::vector<BlockCache>& caches);
Matrix stack_backward(const Matrix& dy, const ParamStore& p, ParamStore& grads,
                      const std::string& stack_name, int n_heads,
                      const std::vector<BlockCache>& caches);

}  // namespace pulsemap::nn
