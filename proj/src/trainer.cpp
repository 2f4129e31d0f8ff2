#include "csijepa/trainer.hpp"

#include "csijepa/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace csijepa {

namespace {

constexpr std::uint64_t kMaskStream = 0x6d61736bULL;     // "mask"
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;  // "shuf"

template <typename Params>
void add_into(Params& total, Params& part) {
  visit("", [](const std::string&, bool, auto& t, auto& p) { t += p; }, total, part);
}

template <typename Params>
void scale_by(Params& p, float s) {
  visit("", [s](const std::string&, bool, auto& t) { t *= s; }, p);
}

/// Mean over (token, dim) of the across-sample standard deviation.
double target_spread(const std::vector<Mat<float>>& latents) {
  if (latents.size() < 2) return 0.0;
  const auto n = static_cast<double>(latents.size());
  Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(latents[0].rows(), latents[0].cols());
  Eigen::ArrayXXd sq = sum;
  for (const auto& l : latents) {
    const Eigen::ArrayXXd x = l.cast<double>().array();
    sum += x;
    sq += x.square();
  }
  const Eigen::ArrayXXd mean = sum / n;
  const Eigen::ArrayXXd var = (sq / n - mean.square()).max(0.0);
  return var.sqrt().mean();
}

}  // namespace

double mu_schedule(std::int64_t step, std::int64_t total_steps, double start, double end) {
  if (total_steps <= 1) return end;
  const std::int64_t s = std::clamp<std::int64_t>(step, 0, total_steps - 1);
  return start + (end - start) * static_cast<double>(s) / static_cast<double>(total_steps - 1);
}

void PretrainConfig::validate() const {
  if (epochs <= 0) throw Error("pretrain: epochs must be positive");
  if (batch_size <= 0) throw Error("pretrain: batch_size must be positive");
  if (optimizer.lr < 0.0 || optimizer.weight_decay < 0.0) throw Error("pretrain: negative learning rate or decay");
  if (!(mu_start > 0.0 && mu_start <= 1.0 && mu_end > 0.0 && mu_end <= 1.0)) {
    throw Error("pretrain: momentum endpoints must lie in (0, 1]");
  }
  if (!(mask.eta >= 0.0 && mask.eta <= 1.0)) throw Error("pretrain: eta must lie in [0, 1]");
  if (!(mask.lambda >= 0.0 && mask.lambda <= 1.0)) throw Error("pretrain: lambda must lie in [0, 1]");
  if (checkpoint_every <= 0) throw Error("pretrain: checkpoint_every must be positive");
  if (threads <= 0) throw Error("pretrain: threads must be positive");
}

std::int64_t steps_per_epoch(std::size_t corpus_size, int batch_size) {
  return static_cast<std::int64_t>((corpus_size + batch_size - 1) / batch_size);
}

LossRecord pretrain_step(ModelState<float>& state, const PositionalTable<float>& positions,
                         std::span<const CsiWindow* const> batch, const PretrainConfig& cfg, std::int64_t total_steps,
                         const CounterRng& step_rng) {
  if (batch.empty()) throw Error("pretrain_step: empty batch");
  const std::size_t n = batch.size();
  const auto worker_count = static_cast<std::size_t>(std::max(1, cfg.threads));

  std::vector<float> losses(n);
  std::vector<Mat<float>> latents(n);
  Gradients<float> total = Gradients<float>::zeros_for(state);

  // Samples are processed in waves of `worker_count`. Each sample writes its
  // own gradient buffer; buffers are summed in sample order, so the result is
  // independent of the thread count.
  std::vector<Gradients<float>> scratch(std::min(worker_count, n), total);
  for (std::size_t wave = 0; wave < n; wave += worker_count) {
    const std::size_t wave_size = std::min(worker_count, n - wave);
    auto work = [&](std::size_t slot) {
      const std::size_t i = wave + slot;
      scratch[slot] = Gradients<float>::zeros_for(state);
      CounterRng rng = step_rng.split(i);
      const MaskSpec mask = sample_mask(*batch[i], state.config.patch, cfg.mask, rng);
      losses[i] = jepa_sample_loss(state, positions, *batch[i], mask, &scratch[slot], &latents[i]);
    };
    if (wave_size == 1) {
      work(0);
    } else {
      std::vector<std::jthread> threads;
      threads.reserve(wave_size);
      for (std::size_t slot = 0; slot < wave_size; ++slot) threads.emplace_back(work, slot);
    }
    for (std::size_t slot = 0; slot < wave_size; ++slot) {
      add_into(total.online, scratch[slot].online);
      add_into(total.predictor, scratch[slot].predictor);
    }
  }

  double loss_sum = 0.0;
  for (float l : losses) loss_sum += l;
  const double loss = loss_sum / static_cast<double>(n);
  if (!std::isfinite(loss)) {
    throw Error("pretrain_step: non-finite loss at step " + std::to_string(state.step) + " (batch of " +
                std::to_string(n) + ")");
  }

  const float inv = 1.0f / static_cast<float>(n);
  scale_by(total.online, inv);
  scale_by(total.predictor, inv);

  const std::int64_t t = state.step + 1;
  adamw_update(state.online, total.online, state.online_m, state.online_v, t, cfg.optimizer);
  adamw_update(state.predictor, total.predictor, state.predictor_m, state.predictor_v, t, cfg.optimizer);
  const double mu = cfg.fixed_mu ? *cfg.fixed_mu : mu_schedule(state.step, total_steps, cfg.mu_start, cfg.mu_end);
  ema_update(state.online, state.target, mu);

  LossRecord rec{state.step, state.epoch, loss, target_spread(latents)};
  state.step = t;
  return rec;
}

PretrainResult pretrain(std::span<const CsiWindow> corpus, const PretrainConfig& cfg, ModelState<float> initial,
                        const std::filesystem::path& out_dir) {
  cfg.validate();
  if (corpus.empty()) throw Error("pretrain: empty corpus");
  for (const auto& w : corpus) initial.config.patch.check_window(w);

  const std::int64_t per_epoch = steps_per_epoch(corpus.size(), cfg.batch_size);
  const std::int64_t total_steps = per_epoch * cfg.epochs;
  const auto positions = sincos_positions<float>(initial.config.patch);
  const CounterRng root(cfg.seed);
  const CounterRng mask_root = root.split(kMaskStream);
  const CounterRng shuffle_root = root.split(kShuffleStream);

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const bool resuming = initial.epoch > 0;

  PretrainResult result{std::move(initial), {}};
  ModelState<float>& state = result.state;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    std::vector<LossRecord> epoch_log;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const CsiWindow*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&corpus[order[i]]);
      epoch_log.push_back(pretrain_step(state, positions, batch, cfg, total_steps,
                                        mask_root.split(static_cast<std::uint64_t>(state.step))));
    }
    state.epoch = epoch + 1;

    if (!out_dir.empty()) {
      write_loss_log(out_dir / "loss_log.csv", epoch_log, resuming || epoch > 0);
      if (state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.epochs) {
        save_checkpoint(state, out_dir / ("checkpoint_epoch" + std::to_string(state.epoch)));
      }
    }
    result.log.insert(result.log.end(), epoch_log.begin(), epoch_log.end());
  }
  return result;
}

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> records, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error("write_loss_log: cannot open " + path.string());
  if (header) out << "step,epoch,loss,target_std\n";
  out.precision(9);
  for (const auto& r : records) out << r.step << ',' << r.epoch << ',' << r.loss << ',' << r.target_std << '\n';
}

std::vector<LossRecord> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_loss_log: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,epoch,loss,target_std") throw Error("read_loss_log: unexpected header in " + path.string());
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    LossRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(row >> r.step >> c1 >> r.epoch >> c2 >> r.loss >> c3 >> r.target_std) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw Error("read_loss_log: malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig m;
  m.patch = PatchConfig(static_cast<int>(kv.get_int("channels", 1)), static_cast<int>(kv.get_int("subcarriers", 232)),
                        static_cast<int>(kv.get_int("time_steps", 500)), static_cast<int>(kv.get_int("patch_k", 8)),
                        static_cast<int>(kv.get_int("patch_t", 25)), static_cast<int>(kv.get_int("embed_dim", 256)));
  m.encoder_depth = static_cast<int>(kv.get_int("encoder_depth", m.encoder_depth));
  m.encoder_heads = static_cast<int>(kv.get_int("encoder_heads", m.encoder_heads));
  m.predictor_dim = static_cast<int>(kv.get_int("predictor_dim", m.predictor_dim));
  m.predictor_depth = static_cast<int>(kv.get_int("predictor_depth", m.predictor_depth));
  m.predictor_heads = static_cast<int>(kv.get_int("predictor_heads", m.predictor_heads));
  m.mlp_ratio = static_cast<int>(kv.get_int("mlp_ratio", m.mlp_ratio));
  m.validate();
  return m;
}

PretrainConfig pretrain_config_from(const KeyValueConfig& kv) {
  PretrainConfig c;
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.optimizer.lr = kv.get_double("lr", c.optimizer.lr);
  c.optimizer.weight_decay = kv.get_double("weight_decay", c.optimizer.weight_decay);
  c.mask.strategy = parse_mask_strategy(kv.get_string("strategy", "channel-aware"));
  c.mask.lambda = kv.get_double("lambda", c.mask.lambda);
  c.mask.eta = kv.get_double("eta", c.mask.eta);
  c.mask.eps = kv.get_double("eps_stab", c.mask.eps);
  c.mask.ranges.area_min = kv.get_double("area_min", c.mask.ranges.area_min);
  c.mask.ranges.area_max = kv.get_double("area_max", c.mask.ranges.area_max);
  c.mask.ranges.aspect_min = kv.get_double("aspect_min", c.mask.ranges.aspect_min);
  c.mask.ranges.aspect_max = kv.get_double("aspect_max", c.mask.ranges.aspect_max);
  c.mu_start = kv.get_double("mu_start", c.mu_start);
  c.mu_end = kv.get_double("mu_end", c.mu_end);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.validate();
  return c;
}

}  // namespace csijepa
