#include "pulsemap/layers.hpp"

#include <cmath>
#include <numbers>

namespace pulsemap::nn {

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                  LayerNormCache& cache) {
  const auto n = x.rows();
  const double d = double(x.cols());
  cache.xhat.resize(n, x.cols());
  cache.inv_std.resize(n);
  Matrix y(n, x.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / d;
    const auto centered = (x.row(r).array() - mean).matrix();
    const double var = centered.squaredNorm() / d;
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = centered * inv;
    y.row(r) = cache.xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache,
                           Matrix& dgain, Matrix& dbias) {
  dgain.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  dbias.row(0) += dy.colwise().sum();
  const double d = double(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const RowVector dxhat = dy.row(r).cwiseProduct(gain.row(0));
    const double sum = dxhat.sum();
    const double dot = dxhat.dot(cache.xhat.row(r));
    dx.row(r) = (cache.inv_std(r) / d) *
                (d * dxhat.array() - sum - cache.xhat.row(r).array() * dot).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------

namespace {

void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

Matrix attention(const Matrix& x, const ParamStore& p, const std::string& prefix, int n_heads,
                 AttentionCache& cache) {
  const std::string a = prefix + "attn.";
  cache.x = x;
  cache.q = linear(x, p.get(a + "wq"), p.get(a + "bq"));
  cache.k = linear(x, p.get(a + "wk"), p.get(a + "bk"));
  cache.v = linear(x, p.get(a + "wv"), p.get(a + "bv"));
  const auto width = x.cols();
  const auto dh = width / n_heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  cache.concat.resize(x.rows(), width);
  cache.probs.assign(static_cast<std::size_t>(n_heads), Matrix{});
  for (int h = 0; h < n_heads; ++h) {
    const auto c0 = h * dh;
    Matrix s = scale * (cache.q.middleCols(c0, dh) * cache.k.middleCols(c0, dh).transpose());
    softmax_rows(s);
    cache.concat.middleCols(c0, dh).noalias() = s * cache.v.middleCols(c0, dh);
    cache.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return linear(cache.concat, p.get(a + "wo"), p.get(a + "bo"));
}

Matrix attention_backward(const Matrix& dy, const ParamStore& p, ParamStore& grads,
                          const std::string& prefix, int n_heads, const AttentionCache& cache) {
  const std::string a = prefix + "attn.";
  const Matrix dconcat =
      linear_backward(cache.concat, p.get(a + "wo"), dy, grads.get(a + "wo"), grads.get(a + "bo"));
  const auto width = cache.x.cols();
  const auto dh = width / n_heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  Matrix dq(cache.x.rows(), width), dk(cache.x.rows(), width), dv(cache.x.rows(), width);
  for (int h = 0; h < n_heads; ++h) {
    const auto c0 = h * dh;
    const Matrix& prob = cache.probs[static_cast<std::size_t>(h)];
    const auto dout = dconcat.middleCols(c0, dh);
    dv.middleCols(c0, dh).noalias() = prob.transpose() * dout;
    const Matrix dprob = dout * cache.v.middleCols(c0, dh).transpose();
    Matrix ds = prob.cwiseProduct(dprob);
    const Vector rowdot = ds.rowwise().sum();
    ds -= prob.cwiseProduct(rowdot.replicate(1, prob.cols()));
    ds *= scale;
    dq.middleCols(c0, dh).noalias() = ds * cache.k.middleCols(c0, dh);
    dk.middleCols(c0, dh).noalias() = ds.transpose() * cache.q.middleCols(c0, dh);
  }
  Matrix dx = linear_backward(cache.x, p.get(a + "wq"), dq, grads.get(a + "wq"), grads.get(a + "bq"));
  dx += linear_backward(cache.x, p.get(a + "wk"), dk, grads.get(a + "wk"), grads.get(a + "bk"));
  dx += linear_backward(cache.x, p.get(a + "wv"), dv, grads.get(a + "wv"), grads.get(a + "bv"));
  return dx;
}

// ---------------------------------------------------------------------------

Matrix block(const Matrix& x, const ParamStore& p, const std::string& prefix, int n_heads,
             double eps, BlockCache& cache) {
  const Matrix n1 = layer_norm(x, p.get(prefix + "ln1.g"), p.get(prefix + "ln1.b"), eps, cache.ln1);
  const Matrix h = x + attention(n1, p, prefix, n_heads, cache.attn);
  cache.ln2_out = layer_norm(h, p.get(prefix + "ln2.g"), p.get(prefix + "ln2.b"), eps, cache.ln2);
  cache.fc1_pre = linear(cache.ln2_out, p.get(prefix + "mlp.fc1.w"), p.get(prefix + "mlp.fc1.b"));
  cache.fc1_act = gelu(cache.fc1_pre);
  return h + linear(cache.fc1_act, p.get(prefix + "mlp.fc2.w"), p.get(prefix + "mlp.fc2.b"));
}

Matrix block_backward(const Matrix& dy, const ParamStore& p, ParamStore& grads,
                      const std::string& prefix, int n_heads, const BlockCache& cache) {
  Matrix dact = linear_backward(cache.fc1_act, p.get(prefix + "mlp.fc2.w"), dy,
                                grads.get(prefix + "mlp.fc2.w"), grads.get(prefix + "mlp.fc2.b"));
  const Matrix dpre = dact.cwiseProduct(cache.fc1_pre.unaryExpr([](double v) { return gelu_grad(v); }));
  const Matrix dln2 = linear_backward(cache.ln2_out, p.get(prefix + "mlp.fc1.w"), dpre,
                                      grads.get(prefix + "mlp.fc1.w"), grads.get(prefix + "mlp.fc1.b"));
  Matrix dh = dy + layer_norm_backward(dln2, p.get(prefix + "ln2.g"), cache.ln2,
                                       grads.get(prefix + "ln2.g"), grads.get(prefix + "ln2.b"));
  const Matrix dn1 = attention_backward(dh, p, grads, prefix, n_heads, cache.attn);
  return dh + layer_norm_backward(dn1, p.get(prefix + "ln1.g"), cache.ln1, grads.get(prefix + "ln1.g"),
                                  grads.get(prefix + "ln1.b"));
}

Matrix stack(const Matrix& x, const ParamStore& p, const std::string& stack_name, int n_layers,
             int n_heads, double eps, std::vector<BlockCache>& caches) {
  caches.assign(static_cast<std::size_t>(n_layers), BlockCache{});
  Matrix h = x;
  for (int l = 0; l < n_layers; ++l)
    h = block(h, p, stack_name + "." + std::to_string(l) + ".", n_heads, eps,
              caches[static_cast<std::size_t>(l)]);
  return h;
}

Matrix stack_backward(const Matrix& dy, const ParamStore& p, ParamStore& grads,
                      const std::string& stack_name, int n_heads,
                      const std::vector<BlockCache>& caches) {
  Matrix d = dy;
  for (std::size_t l = caches.size(); l-- > 0;)
    d = block_backward(d, p, grads, stack_name + "." + std::to_string(l) + ".", n_heads, caches[l]);
  return d;
}

}  // namespace pulsemap::nn
