#pragma once

#include "csijepa/layers.hpp"
#include "csijepa/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csijepa {

/// Architecture hyperparameters. Defaults are the full-scale model
/// (232 x 500 window, 8 x 25 patches, width 256).
struct ModelConfig {
  PatchConfig patch{1, 232, 500, 8, 25, 256};
  int encoder_depth = 6;
  int encoder_heads = 8;
  int predictor_dim = 192;
  int predictor_depth = 3;
  int predictor_heads = 6;
  int mlp_ratio = 4;

  [[nodiscard]] int embed_dim() const noexcept { return patch.embed_dim(); }
  void validate() const;
};

inline void ModelConfig::validate() const {
  const int d = embed_dim();
  if (d % 4 != 0) throw Error("model: embed dim must be divisible by 4");
  if (encoder_heads <= 0 || d % encoder_heads != 0) throw Error("model: embed dim not divisible by encoder heads");
  if (predictor_heads <= 0 || predictor_dim % predictor_heads != 0) {
    throw Error("model: predictor dim not divisible by predictor heads");
  }
  if (encoder_depth < 0 || predictor_depth < 0 || mlp_ratio <= 0) throw Error("model: negative depth");
}

// ---------------------------------------------------------------------------

template <typename S>
struct EncoderParams {
  LinearParams<S> patch;  ///< D x (C * P_K * P_T)
  std::vector<BlockParams<S>> blocks;
  NormParams<S> norm;
  int heads = 1;
};

template <typename S>
struct PredictorParams {
  LinearParams<S> embed;  ///< D -> D_p; its weight also projects target positions
  RowVec<S> mask_token;
  std::vector<BlockParams<S>> blocks;
  NormParams<S> norm;
  LinearParams<S> head;   ///< D_p -> D
  int heads = 1;
};

template <typename F, typename... P>
void visit(std::string_view prefix, F&& f, EncoderParams<P>&... p) {
  const std::string base(prefix);
  visit(base + ".patch", f, p.patch...);
  const auto depth = std::get<0>(std::forward_as_tuple(p...)).blocks.size();
  if (((p.blocks.size() != depth) || ...)) throw Error("visit: encoder depth mismatch");
  for (std::size_t i = 0; i < depth; ++i) visit(base + ".blocks." + std::to_string(i), f, p.blocks[i]...);
  visit(base + ".norm", f, p.norm...);
}

template <typename F, typename... P>
void visit(std::string_view prefix, F&& f, PredictorParams<P>&... p) {
  const std::string base(prefix);
  visit(base + ".embed", f, p.embed...);
  f(base + ".mask_token", false, p.mask_token...);
  const auto depth = std::get<0>(std::forward_as_tuple(p...)).blocks.size();
  if (((p.blocks.size() != depth) || ...)) throw Error("visit: predictor depth mismatch");
  for (std::size_t i = 0; i < depth; ++i) visit(base + ".blocks." + std::to_string(i), f, p.blocks[i]...);
  visit(base + ".norm", f, p.norm...);
  visit(base + ".head", f, p.head...);
}

/// Same structure, every tensor zero.
template <typename Params>
Params zeros_like(const Params& p) {
  Params z = p;
  visit("", [](const std::string&, bool, auto& t) { t.setZero(); }, z);
  return z;
}

template <typename S>
EncoderParams<S> init_encoder(const ModelConfig& cfg, CounterRng& rng) {
  EncoderParams<S> p;
  p.patch = make_patch_projection<S>(cfg.patch, rng);
  for (int i = 0; i < cfg.encoder_depth; ++i) p.blocks.push_back(BlockParams<S>::init(cfg.embed_dim(), rng, cfg.mlp_ratio));
  p.norm = NormParams<S>::identity(cfg.embed_dim());
  p.heads = cfg.encoder_heads;
  return p;
}

template <typename S>
PredictorParams<S> init_predictor(const ModelConfig& cfg, CounterRng& rng) {
  PredictorParams<S> p;
  p.embed = make_linear<S>(cfg.embed_dim(), cfg.predictor_dim, rng);
  Mat<S> token(1, cfg.predictor_dim);
  init_truncated_normal(token, rng);
  p.mask_token = token.row(0);
  for (int i = 0; i < cfg.predictor_depth; ++i) {
    p.blocks.push_back(BlockParams<S>::init(cfg.predictor_dim, rng, cfg.mlp_ratio));
  }
  p.norm = NormParams<S>::identity(cfg.predictor_dim);
  p.head = make_linear<S>(cfg.predictor_dim, cfg.embed_dim(), rng);
  p.heads = cfg.predictor_heads;
  return p;
}

// ---------------------------------------------------------------------------
// Encoder

template <typename S>
struct EncoderCache {
  std::vector<BlockCache<S>> blocks;
  NormCache<S> norm;
};

/// Patch projection plus fixed positions for every token of the window.
template <typename S>
Mat<S> embed_tokens(const EncoderParams<S>& p, const CsiWindow& window, const PatchConfig& cfg,
                    const PositionalTable<S>& positions) {
  return add_positions(patch_embed(window, p.patch, cfg), positions).tokens;
}

/// Pre-norm transformer over n positioned tokens, then a final LayerNorm.
template <typename S>
Mat<S> encode(const EncoderParams<S>& p, const Mat<S>& tokens, EncoderCache<S>* cache = nullptr) {
  if (tokens.rows() < 1) throw Error("encode: need at least one token");
  if (cache) cache->blocks.resize(p.blocks.size());
  Mat<S> x = tokens;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    x = block_forward(x, p.blocks[i], p.heads, cache ? &cache->blocks[i] : nullptr);
    if (!x.allFinite()) throw Error("encode: non-finite activations after encoder block " + std::to_string(i));
  }
  Mat<S> out = layer_norm(x, p.norm, cache ? &cache->norm : nullptr);
  if (!out.allFinite()) throw Error("encode: non-finite activations after final norm");
  return out;
}

/// Returns d(loss)/d(tokens); parameter gradients accumulate into `g`.
template <typename S>
Mat<S> encode_backward(const EncoderParams<S>& p, const EncoderCache<S>& c, const Mat<S>& dout, EncoderParams<S>& g) {
  Mat<S> dx = layer_norm_backward(dout, p.norm, c.norm, g.norm);
  for (std::size_t i = p.blocks.size(); i-- > 0;) dx = block_backward(dx, p.blocks[i], p.heads, c.blocks[i], g.blocks[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Predictor

template <typename S>
struct PredictorCache {
  Mat<S> context;
  Mat<S> target_positions;
  std::vector<BlockCache<S>> blocks;
  NormCache<S> norm;
  Mat<S> normed_targets;
};

/// Context latents (n_c x D) are projected to the predictor width; each target
/// slot starts as mask_token + W_embed * position. The joint sequence runs
/// through the predictor blocks and the target rows go through the head.
template <typename S>
Mat<S> predict_targets(const PredictorParams<S>& p, const Mat<S>& h_context, const Mat<S>& target_positions,
                       PredictorCache<S>* cache = nullptr) {
  const Eigen::Index n_context = h_context.rows();
  const Eigen::Index n_target = target_positions.rows();
  if (n_context < 1 || n_target < 1) throw Error("predict_targets: need at least one context and one target");
  if (h_context.cols() != p.embed.in_dim() || target_positions.cols() != p.embed.in_dim()) {
    throw Error("predict_targets: input width does not match predictor embedding");
  }
  const Eigen::Index width = p.embed.out_dim();
  Mat<S> x(n_context + n_target, width);
  x.topRows(n_context) = linear(h_context, p.embed);
  x.bottomRows(n_target).noalias() = target_positions * p.embed.weight.transpose();
  x.bottomRows(n_target).rowwise() += p.mask_token;

  if (cache) cache->blocks.resize(p.blocks.size());
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    x = block_forward(x, p.blocks[i], p.heads, cache ? &cache->blocks[i] : nullptr);
    if (!x.allFinite()) throw Error("predict_targets: non-finite activations after predictor block " + std::to_string(i));
  }
  Mat<S> normed = layer_norm(x, p.norm, cache ? &cache->norm : nullptr);
  Mat<S> tail = normed.bottomRows(n_target);
  Mat<S> out = linear(tail, p.head);
  if (!out.allFinite()) throw Error("predict_targets: non-finite prediction");
  if (cache) {
    cache->context = h_context;
    cache->target_positions = target_positions;
    cache->normed_targets = std::move(tail);
  }
  return out;
}

/// Returns d(loss)/d(h_context).
template <typename S>
Mat<S> predict_backward(const PredictorParams<S>& p, const PredictorCache<S>& c, const Mat<S>& dpred,
                        PredictorParams<S>& g) {
  const Eigen::Index n_context = c.context.rows();
  const Eigen::Index n_target = c.target_positions.rows();
  Mat<S> dnormed = Mat<S>::Zero(n_context + n_target, p.embed.out_dim());
  dnormed.bottomRows(n_target) = linear_backward(dpred, c.normed_targets, p.head, g.head);
  Mat<S> dx = layer_norm_backward(dnormed, p.norm, c.norm, g.norm);
  for (std::size_t i = p.blocks.size(); i-- > 0;) dx = block_backward(dx, p.blocks[i], p.heads, c.blocks[i], g.blocks[i]);

  const auto dmask = dx.bottomRows(n_target);
  g.mask_token += dmask.colwise().sum();
  g.embed.weight.noalias() += dmask.transpose() * c.target_positions;
  return linear_backward(Mat<S>(dx.topRows(n_context)), c.context, p.embed, g.embed);
}

// ---------------------------------------------------------------------------
// Model state

template <typename S>
struct ModelState {
  ModelConfig config;
  EncoderParams<S> online;
  EncoderParams<S> target;
  PredictorParams<S> predictor;
  // AdamW first and second moments for the trainable parameters
  EncoderParams<S> online_m;
  EncoderParams<S> online_v;
  PredictorParams<S> predictor_m;
  PredictorParams<S> predictor_v;
  std::int64_t step = 0;
  int epoch = 0;  ///< completed epochs
};

/// Fresh model: online encoder and predictor initialized from `seed`, target
/// an exact copy of the online encoder, optimizer moments zero.
template <typename S>
ModelState<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(seed);
  CounterRng enc_rng = rng.split(1);
  CounterRng pred_rng = rng.split(2);
  ModelState<S> s;
  s.config = cfg;
  s.online = init_encoder<S>(cfg, enc_rng);
  s.target = s.online;
  s.predictor = init_predictor<S>(cfg, pred_rng);
  s.online_m = zeros_like(s.online);
  s.online_v = zeros_like(s.online);
  s.predictor_m = zeros_like(s.predictor);
  s.predictor_v = zeros_like(s.predictor);
  return s;
}

/// Trainable-parameter gradients. The target encoder has no slot here.
template <typename S>
struct Gradients {
  EncoderParams<S> online;
  PredictorParams<S> predictor;

  static Gradients zeros_for(const ModelState<S>& s) { return {zeros_like(s.online), zeros_like(s.predictor)}; }
};

/// target <- mu * target + (1 - mu) * online, tensor by tensor.
template <typename S>
void ema_update(const EncoderParams<S>& online, EncoderParams<S>& target, double mu) {
  const S keep = static_cast<S>(mu);
  const S take = static_cast<S>(1.0 - mu);
  visit("", [&](const std::string&, bool, auto& on, auto& tg) { tg = keep * tg + take * on; },
        const_cast<EncoderParams<S>&>(online), target);
}

/// Total scalar count of a parameter structure.
template <typename Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  visit("", [&](const std::string&, bool, auto& t) { n += static_cast<std::size_t>(t.size()); },
        const_cast<Params&>(p));
  return n;
}

/// FNV-1a over the raw bytes of every tensor; used to prove a frozen
/// encoder was left untouched.
template <typename Params>
std::uint64_t checksum(const Params& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  visit("", [&](const std::string&, bool, auto& t) {
          const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
          for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(*t.data()); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
          }
        },
        const_cast<Params&>(p));
  return h;
}

}  // namespace csijepa
