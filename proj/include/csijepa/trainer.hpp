#pragma once

#include "csijepa/config.hpp"
#include "csijepa/masking.hpp"
#include "csijepa/net.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace csijepa {

// ---------------------------------------------------------------------------
// Smooth L1 latent loss: per element 0.5 r^2 if |r| < 1 else |r| - 0.5,
// averaged over the embedding width and then over target rows.

template <typename S>
S smooth_l1(const Mat<S>& pred, const Mat<S>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw Error("smooth_l1: shape mismatch");
  if (pred.size() == 0) throw Error("smooth_l1: empty input");
  const auto r = (pred - target).array();
  const auto a = r.abs();
  const auto per_elem = (a < static_cast<S>(1)).select(static_cast<S>(0.5) * r.square(), a - static_cast<S>(0.5));
  return per_elem.sum() / static_cast<S>(pred.size());
}

template <typename S>
Mat<S> smooth_l1_grad(const Mat<S>& pred, const Mat<S>& target) {
  const auto r = (pred - target).array();
  const S scale = static_cast<S>(1) / static_cast<S>(pred.size());
  return ((r.abs() < static_cast<S>(1)).select(r, r.sign()) * scale).matrix();
}

/// Loss for one window under one mask. When `grads` is given, the online
/// encoder and predictor gradients of this loss accumulate into it. The
/// target encoder runs forward only. `target_latents` receives the full
/// N x D target-encoder output.
template <typename S>
S jepa_sample_loss(const ModelState<S>& state, const PositionalTable<S>& positions, const CsiWindow& window,
                   const MaskSpec& mask, Gradients<S>* grads = nullptr, Mat<S>* target_latents = nullptr) {
  const PatchConfig& cfg = state.config.patch;
  const Mat<S> patches = patchify<S>(window, cfg);

  // target branch: full sequence, stop-gradient
  Mat<S> target_tokens = linear(patches, state.target.patch) + positions.table;
  Mat<S> target_full = encode(state.target, target_tokens);
  const Mat<S> h_target = gather_rows(target_full, mask.target);

  // online branch: context tokens only
  Mat<S> tokens = linear(patches, state.online.patch) + positions.table;
  const Mat<S> context_tokens = gather_rows(tokens, mask.context);
  EncoderCache<S> enc_cache;
  PredictorCache<S> pred_cache;
  const bool need_grad = grads != nullptr;
  const Mat<S> h_context = encode(state.online, context_tokens, need_grad ? &enc_cache : nullptr);
  const Mat<S> pred = predict_targets(state.predictor, h_context, gather_rows(positions.table, mask.target),
                                      need_grad ? &pred_cache : nullptr);
  const S loss = smooth_l1(pred, h_target);

  if (need_grad) {
    const Mat<S> dpred = smooth_l1_grad(pred, h_target);
    const Mat<S> dcontext = predict_backward(state.predictor, pred_cache, dpred, grads->predictor);
    const Mat<S> dctx_tokens = encode_backward(state.online, enc_cache, dcontext, grads->online);
    Mat<S> dtokens = Mat<S>::Zero(tokens.rows(), tokens.cols());
    for (std::size_t r = 0; r < mask.context.size(); ++r) dtokens.row(mask.context[r]) = dctx_tokens.row(static_cast<Eigen::Index>(r));
    linear_backward(dtokens, patches, state.online.patch, grads->online.patch);
  }
  if (target_latents) *target_latents = std::move(target_full);
  return loss;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One update at 1-based step `t`. Tensors visited with decay=false (norm
/// parameters, mask token) skip weight decay.
template <typename Params>
void adamw_update(Params& params, Params& grads, Params& m, Params& v, std::int64_t t, const AdamWConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  visit("", [&](const std::string&, bool decay, auto& p, auto& g, auto& m1, auto& m2) {
          using S = typename std::remove_reference_t<decltype(p)>::Scalar;
          if (decay) p *= static_cast<S>(1.0 - cfg.lr * cfg.weight_decay);
          m1 = static_cast<S>(cfg.beta1) * m1 + static_cast<S>(1.0 - cfg.beta1) * g;
          m2 = static_cast<S>(cfg.beta2) * m2 + static_cast<S>(1.0 - cfg.beta2) * g.cwiseAbs2();
          const auto mhat = m1.array() / static_cast<S>(bc1);
          const auto vhat = m2.array() / static_cast<S>(bc2);
          p.array() -= static_cast<S>(cfg.lr) * mhat / (vhat.sqrt() + static_cast<S>(cfg.eps));
        },
        params, grads, m, v);
}

/// Linear EMA momentum ramp from `start` at step 0 to `end` at the last step.
double mu_schedule(std::int64_t step, std::int64_t total_steps, double start = 0.996, double end = 1.0);

// ---------------------------------------------------------------------------

struct PretrainConfig {
  int epochs = 20;
  int batch_size = 16;
  AdamWConfig optimizer;
  MaskPolicy mask;
  double mu_start = 0.996;
  double mu_end = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 5;
  int threads = 1;
  /// Forces mu regardless of the schedule when set (testing hook).
  std::optional<double> fixed_mu;

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double target_std = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

std::int64_t steps_per_epoch(std::size_t corpus_size, int batch_size);

/// One optimizer step over `batch`. Masks come from `step_rng.split(i)` for
/// sample i, so the step is reproducible for any thread count.
LossRecord pretrain_step(ModelState<float>& state, const PositionalTable<float>& positions,
                         std::span<const CsiWindow* const> batch, const PretrainConfig& cfg, std::int64_t total_steps,
                         const CounterRng& step_rng);

struct PretrainResult {
  ModelState<float> state;
  std::vector<LossRecord> log;
};

/// Runs the remaining epochs (from `initial.epoch` to `cfg.epochs`) over the
/// seeded per-epoch shuffle of `corpus`. With a non-empty `out_dir`, writes
/// `loss_log.csv` and checkpoints `checkpoint_epoch<E>` every
/// `checkpoint_every` epochs plus the final one.
PretrainResult pretrain(std::span<const CsiWindow> corpus, const PretrainConfig& cfg, ModelState<float> initial,
                        const std::filesystem::path& out_dir = {});

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> records, bool append = false);
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

ModelConfig model_config_from(const KeyValueConfig& kv);
PretrainConfig pretrain_config_from(const KeyValueConfig& kv);

}  // namespace csijepa
