#pragma once

// Dense building blocks with hand-written reverse passes. Activations are
// n x width matrices with one token per row. Every backward function
// accumulates (+=) into the gradient structure it is handed.

#include "csijepa/core.hpp"
#include "csijepa/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace csijepa {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// y = x W^T + b, W is out x in.
template <typename S>
struct LinearParams {
  Mat<S> weight;
  RowVec<S> bias;

  [[nodiscard]] int in_dim() const { return static_cast<int>(weight.cols()); }
  [[nodiscard]] int out_dim() const { return static_cast<int>(weight.rows()); }

  static LinearParams zeros(int in, int out) {
    return {Mat<S>::Zero(out, in), RowVec<S>::Zero(out)};
  }
};

template <typename S>
struct NormParams {
  RowVec<S> scale;
  RowVec<S> shift;

  static NormParams identity(int dim) { return {RowVec<S>::Ones(dim), RowVec<S>::Zero(dim)}; }
  static NormParams zeros(int dim) { return {RowVec<S>::Zero(dim), RowVec<S>::Zero(dim)}; }
};

inline constexpr double kLayerNormEps = 1e-6;

template <typename S>
void init_truncated_normal(Mat<S>& w, CounterRng& rng, double stddev = 0.02) {
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.truncated_normal(stddev));
}

template <typename S>
LinearParams<S> make_linear(int in, int out, CounterRng& rng) {
  auto p = LinearParams<S>::zeros(in, out);
  init_truncated_normal(p.weight, rng);
  return p;
}

/// Weights and bias uniform in +-1/sqrt(in).
template <typename S>
LinearParams<S> make_linear_fan_in(int in, int out, CounterRng& rng) {
  auto p = LinearParams<S>::zeros(in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return p;
}

// ---------------------------------------------------------------------------
// Linear

template <typename S>
Mat<S> linear(const Mat<S>& x, const LinearParams<S>& p) {
  Mat<S> y = x * p.weight.transpose();
  y.rowwise() += p.bias;
  return y;
}

template <typename S>
Mat<S> linear_backward(const Mat<S>& dy, const Mat<S>& x, const LinearParams<S>& p, LinearParams<S>& g) {
  g.weight.noalias() += dy.transpose() * x;
  g.bias += dy.colwise().sum();
  return dy * p.weight;
}

// ---------------------------------------------------------------------------
// LayerNorm over the feature axis of each row

template <typename S>
struct NormCache {
  Mat<S> xhat;
  Vec<S> rstd;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const NormParams<S>& p, NormCache<S>* cache = nullptr) {
  const auto width = static_cast<S>(x.cols());
  Vec<S> mean = x.rowwise().sum() / width;
  Mat<S> centered = x.colwise() - mean;
  Vec<S> var = centered.array().square().rowwise().sum() / width;
  Vec<S> rstd = (var.array() + static_cast<S>(kLayerNormEps)).rsqrt();
  Mat<S> xhat = centered.array().colwise() * rstd.array();
  Mat<S> y = xhat.array().rowwise() * p.scale.array();
  y.rowwise() += p.shift;
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormParams<S>& p, const NormCache<S>& c,
                           NormParams<S>& g) {
  g.scale += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.shift += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * p.scale.array();
  const auto width = static_cast<S>(dy.cols());
  const Vec<S> mean_d = dxhat.rowwise().sum() / width;
  const Vec<S> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum() / width;
  Mat<S> dx = dxhat.colwise() - mean_d;
  dx.array() -= c.xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= c.rstd.array();
  return dx;
}

// ---------------------------------------------------------------------------
// GELU (exact, erf form)

template <typename S>
S gelu(S x) {
  return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = static_cast<S>(0.5) * (static_cast<S>(1) + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(static_cast<S>(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<S> /
                std::numbers::sqrt2_v<S>;
  return cdf + x * pdf;
}

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return gelu(v); });
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& dy, const Mat<S>& x) {
  return dy.cwiseProduct(x.unaryExpr([](S v) { return gelu_grad(v); }));
}

// ---------------------------------------------------------------------------
// Softmax over each row

template <typename S>
void softmax_rows(Mat<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention (full, unmasked)

template <typename S>
struct AttentionCache {
  Mat<S> input;              // LN output fed to qkv
  Mat<S> qkv;                // n x 3D
  std::vector<Mat<S>> probs; // per head, n x n
  Mat<S> heads;              // n x D concatenated head outputs, input to proj
};

template <typename S>
Mat<S> attention(const Mat<S>& x, const LinearParams<S>& qkv_p, const LinearParams<S>& proj_p, int num_heads,
                 AttentionCache<S>* cache = nullptr) {
  const Eigen::Index n = x.rows();
  const Eigen::Index width = proj_p.in_dim();
  const Eigen::Index dh = width / num_heads;
  const S scale = static_cast<S>(1) / std::sqrt(static_cast<S>(dh));

  Mat<S> qkv = linear(x, qkv_p);
  Mat<S> heads(n, width);
  std::vector<Mat<S>> probs;
  if (cache) probs.reserve(num_heads);
  for (int h = 0; h < num_heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(width + h * dh, dh);
    const auto v = qkv.middleCols(2 * width + h * dh, dh);
    Mat<S> p = (q * k.transpose()) * scale;
    softmax_rows(p);
    heads.middleCols(h * dh, dh).noalias() = p * v;
    if (cache) probs.push_back(std::move(p));
  }
  Mat<S> out = linear(heads, proj_p);
  if (cache) {
    cache->input = x;
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->heads = std::move(heads);
  }
  return out;
}

template <typename S>
Mat<S> attention_backward(const Mat<S>& dy, const LinearParams<S>& qkv_p, const LinearParams<S>& proj_p,
                          int num_heads, const AttentionCache<S>& c, LinearParams<S>& g_qkv,
                          LinearParams<S>& g_proj) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index width = proj_p.in_dim();
  const Eigen::Index dh = width / num_heads;
  const S scale = static_cast<S>(1) / std::sqrt(static_cast<S>(dh));

  const Mat<S> dheads = linear_backward(dy, c.heads, proj_p, g_proj);
  Mat<S> dqkv(n, 3 * width);
  for (int h = 0; h < num_heads; ++h) {
    const auto q = c.qkv.middleCols(h * dh, dh);
    const auto k = c.qkv.middleCols(width + h * dh, dh);
    const auto v = c.qkv.middleCols(2 * width + h * dh, dh);
    const Mat<S>& p = c.probs[h];
    const auto dout = dheads.middleCols(h * dh, dh);

    const Mat<S> dp = dout * v.transpose();
    dqkv.middleCols(2 * width + h * dh, dh).noalias() = p.transpose() * dout;
    // softmax Jacobian: ds = p * (dp - rowsum(dp * p))
    const Vec<S> inner = (dp.array() * p.array()).rowwise().sum();
    const Mat<S> ds = (p.array() * (dp.array().colwise() - inner.array())).matrix() * scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(width + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return linear_backward(dqkv, c.input, qkv_p, g_qkv);
}

// ---------------------------------------------------------------------------
// Pre-norm transformer block: x += Attn(LN(x)); x += MLP(LN(x))

template <typename S>
struct BlockParams {
  NormParams<S> norm1;
  LinearParams<S> qkv;
  LinearParams<S> proj;
  NormParams<S> norm2;
  LinearParams<S> fc1;
  LinearParams<S> fc2;

  static BlockParams zeros(int width, int mlp_ratio = 4) {
    return {NormParams<S>::zeros(width),        LinearParams<S>::zeros(width, 3 * width),
            LinearParams<S>::zeros(width, width), NormParams<S>::zeros(width),
            LinearParams<S>::zeros(width, mlp_ratio * width),
            LinearParams<S>::zeros(mlp_ratio * width, width)};
  }

  static BlockParams init(int width, CounterRng& rng, int mlp_ratio = 4) {
    return {NormParams<S>::identity(width), make_linear<S>(width, 3 * width, rng),
            make_linear<S>(width, width, rng), NormParams<S>::identity(width),
            make_linear<S>(width, mlp_ratio * width, rng), make_linear<S>(mlp_ratio * width, width, rng)};
  }
};

template <typename S>
struct BlockCache {
  NormCache<S> norm1;
  AttentionCache<S> attn;
  NormCache<S> norm2;
  Mat<S> mlp_in;   // LN2 output
  Mat<S> hidden;   // fc1 pre-activation
  Mat<S> act;      // GELU output
};

template <typename S>
Mat<S> block_forward(const Mat<S>& x, const BlockParams<S>& p, int num_heads, BlockCache<S>* cache = nullptr) {
  NormCache<S>* n1 = cache ? &cache->norm1 : nullptr;
  NormCache<S>* n2 = cache ? &cache->norm2 : nullptr;
  AttentionCache<S>* ac = cache ? &cache->attn : nullptr;

  Mat<S> h = x + attention(layer_norm(x, p.norm1, n1), p.qkv, p.proj, num_heads, ac);
  Mat<S> mlp_in = layer_norm(h, p.norm2, n2);
  Mat<S> hidden = linear(mlp_in, p.fc1);
  Mat<S> act = gelu(hidden);
  h += linear(act, p.fc2);
  if (cache) {
    cache->mlp_in = std::move(mlp_in);
    cache->hidden = std::move(hidden);
    cache->act = std::move(act);
  }
  return h;
}

template <typename S>
Mat<S> block_backward(const Mat<S>& dy, const BlockParams<S>& p, int num_heads, const BlockCache<S>& c,
                      BlockParams<S>& g) {
  // MLP branch
  const Mat<S> dact = linear_backward(dy, c.act, p.fc2, g.fc2);
  const Mat<S> dhidden = gelu_backward(dact, c.hidden);
  const Mat<S> dmlp_in = linear_backward(dhidden, c.mlp_in, p.fc1, g.fc1);
  Mat<S> dh = dy + layer_norm_backward(dmlp_in, p.norm2, c.norm2, g.norm2);
  // attention branch
  const Mat<S> dattn_in = attention_backward(dh, p.qkv, p.proj, num_heads, c.attn, g.qkv, g.proj);
  return dh + layer_norm_backward(dattn_in, p.norm1, c.norm1, g.norm1);
}

// ---------------------------------------------------------------------------
// Parameter visitation. `f(name, decay, tensors...)` is called once per
// tensor; `decay` says whether weight decay applies to it.

template <typename F, typename... P>
void visit(std::string_view prefix, F&& f, LinearParams<P>&... p) {
  const std::string base(prefix);
  f(base + ".weight", true, p.weight...);
  f(base + ".bias", true, p.bias...);
}

template <typename F, typename... P>
void visit(std::string_view prefix, F&& f, NormParams<P>&... p) {
  const std::string base(prefix);
  f(base + ".scale", false, p.scale...);
  f(base + ".shift", false, p.shift...);
}

template <typename F, typename... P>
void visit(std::string_view prefix, F&& f, BlockParams<P>&... p) {
  const std::string base(prefix);
  visit(base + ".norm1", f, p.norm1...);
  visit(base + ".qkv", f, p.qkv...);
  visit(base + ".proj", f, p.proj...);
  visit(base + ".norm2", f, p.norm2...);
  visit(base + ".fc1", f, p.fc1...);
  visit(base + ".fc2", f, p.fc2...);
}

}  // namespace csijepa
