#include "csijepa/checkpoint.hpp"
#include "csijepa/trainer.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

#include <doctest.h>

#include <cmath>

using namespace csijepa;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.patch = PatchConfig(1, 8, 16, 2, 4, 16);  // 4 x 4 grid
  c.encoder_depth = 1;
  c.encoder_heads = 2;
  c.predictor_dim = 8;
  c.predictor_depth = 1;
  c.predictor_heads = 2;
  return c;
}

std::vector<CsiWindow> small_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<CsiWindow> out;
  const CounterRng root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng = root.split(i);
    CsiWindow w(1, 8, 16);
    const double f = rng.uniform(0.5, 2.0);
    for (int k = 0; k < 8; ++k) {
      for (int t = 0; t < 16; ++t) w.at(0, k, t) = static_cast<float>(std::sin(f * t + 0.3 * k) + 0.1 * rng.normal());
    }
    out.push_back(standardize(w));
  }
  return out;
}

PretrainConfig small_pretrain(int epochs) {
  PretrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.optimizer.lr = 1e-3;
  cfg.seed = 5;
  cfg.checkpoint_every = 2;
  return cfg;
}

}  // namespace

TEST_CASE("smooth L1 reference values") {
  const auto scalar = [](double v) { return Mat<double>(Mat<double>::Constant(1, 1, v)); };
  CHECK(smooth_l1(scalar(0.0), scalar(0.0)) == 0.0);
  CHECK(smooth_l1(scalar(0.5), scalar(0.0)) == 0.125);
  CHECK(smooth_l1(scalar(2.0), scalar(0.0)) == 1.5);
  CHECK(smooth_l1(scalar(-2.0), scalar(0.0)) == 1.5);
  CHECK_THROWS_AS(smooth_l1(Mat<double>(Mat<double>::Zero(2, 2)), Mat<double>(Mat<double>::Zero(2, 3))), Error);
}

TEST_CASE("smooth L1 matches a scalar loop and its gradient matches finite differences") {
  CounterRng rng(3);
  Mat<double> a(3, 4), b(3, 4);
  for (int i = 0; i < 12; ++i) {
    a.data()[i] = 2.0 * rng.normal();
    b.data()[i] = rng.normal();
  }
  double ref = 0.0;
  for (int i = 0; i < 3; ++i) {
    double row = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double r = a(i, j) - b(i, j);
      row += std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
    }
    ref += row / 4.0;
  }
  ref /= 3.0;
  CHECK(std::abs(smooth_l1(a, b) - ref) <= 1e-9);

  const Mat<double> g = smooth_l1_grad(a, b);
  for (int i = 0; i < 12; ++i) {
    Mat<double> up = a, down = a;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    CHECK(g.data()[i] == doctest::Approx((smooth_l1(up, b) - smooth_l1(down, b)) / 2e-6).epsilon(1e-5));
  }
}

TEST_CASE("analytic gradients match central differences on a tiny model") {
  auto s = init_model<double>(gradcheck::tiny_config(), 11);
  gradcheck::perturb(s, 12, 0.3);
  CsiWindow w(1, 4, 4);
  CounterRng rng(13);
  for (float& v : w.values()) v = static_cast<float>(rng.normal());
  for (const MaskSpec& mask : {make_mask(2, 2, 0, 1, {2, 1}, MaskStrategy::Rect),
                               make_mask(2, 2, 1, 1, {1, 1}, MaskStrategy::Rect)}) {
    for (const auto& e : gradcheck::check(s, w, mask, 1e-4)) {
      INFO(e.name);
      CHECK(e.relative <= 1e-4);
    }
  }
}

TEST_CASE("a zeroed predictor head predicts zeros, so the loss is smooth L1 against the targets") {
  auto s = init_model<double>(small_model(), 2);
  s.predictor.head.weight.setZero();
  s.predictor.head.bias.setZero();
  const auto window = small_corpus(1, 1)[0];
  const auto positions = sincos_positions<double>(s.config.patch);
  const MaskSpec mask = make_mask(4, 4, 1, 1, {2, 2}, MaskStrategy::Rect);
  Mat<double> latents;
  const double loss = jepa_sample_loss<double>(s, positions, window, mask, nullptr, &latents);

  const Mat<double> full = encode(s.target, embed_tokens(s.target, window, s.config.patch, positions));
  CHECK((full - latents).cwiseAbs().maxCoeff() == 0.0);
  double direct = 0.0;
  for (int idx : mask.target) {
    for (Eigen::Index d = 0; d < full.cols(); ++d) {
      const double r = std::abs(full(idx, d));
      direct += r < 1.0 ? 0.5 * r * r : r - 0.5;
    }
  }
  direct /= static_cast<double>(mask.target.size() * full.cols());
  CHECK(loss == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("AdamW single step by hand, decay only where flagged") {
  NormParams<double> norm{RowVec<double>::Ones(1), RowVec<double>::Ones(1)};
  LinearParams<double> lin{Mat<double>::Ones(1, 1), RowVec<double>::Ones(1)};
  auto g_norm = NormParams<double>{RowVec<double>::Constant(1, 0.5), RowVec<double>::Constant(1, 0.5)};
  auto g_lin = LinearParams<double>{Mat<double>::Constant(1, 1, 0.5), RowVec<double>::Constant(1, 0.5)};
  auto m_norm = NormParams<double>::zeros(1), v_norm = NormParams<double>::zeros(1);
  auto m_lin = LinearParams<double>::zeros(1, 1), v_lin = LinearParams<double>::zeros(1, 1);
  AdamWConfig cfg{0.1, 0.1};
  adamw_update(norm, g_norm, m_norm, v_norm, 1, cfg);
  adamw_update(lin, g_lin, m_lin, v_lin, 1, cfg);
  // m_hat = 0.5, v_hat = 0.25, step = lr * 0.5 / (0.5 + eps)
  const double step = 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(norm.scale(0) == doctest::Approx(1.0 - step).epsilon(1e-12));
  CHECK(lin.weight(0, 0) == doctest::Approx(0.99 - step).epsilon(1e-12));
  CHECK(m_lin.weight(0, 0) == doctest::Approx(0.05));
  CHECK(v_lin.weight(0, 0) == doctest::Approx(0.00025));
}

TEST_CASE("AdamW with zero gradients shrinks decayed tensors by exactly the decay factor") {
  auto s = init_model<double>(small_model(), 4);
  auto params = s.online;
  auto grads = zeros_like(params);
  auto m = zeros_like(params), v = zeros_like(params);
  const AdamWConfig cfg{0.01, 0.1};
  for (int t = 1; t <= 3; ++t) adamw_update(params, grads, m, v, t, cfg);
  const double factor = std::pow(1.0 - 0.01 * 0.1, 3);
  visit("", [&](const std::string& name, bool decay, auto& before, auto& after) {
          INFO(name);
          const double scale = decay ? factor : 1.0;
          CHECK((after - scale * before).cwiseAbs().maxCoeff() <= 1e-15);
        },
        s.online, params);
}

TEST_CASE("momentum schedule endpoints and midpoint") {
  CHECK(mu_schedule(0, 3) == doctest::Approx(0.996));
  CHECK(mu_schedule(1, 3) == doctest::Approx(0.998));
  CHECK(mu_schedule(2, 3) == doctest::Approx(1.0));
  CHECK(mu_schedule(99, 3) == doctest::Approx(1.0));
  CHECK(mu_schedule(0, 1) == 1.0);
  for (int s = 1; s < 50; ++s) CHECK(mu_schedule(s, 50) >= mu_schedule(s - 1, 50));
}

TEST_CASE("zero learning rate with momentum 1 leaves every parameter unchanged") {
  auto state = init_model<float>(small_model(), 1);
  const auto before_online = checksum(state.online);
  const auto before_target = checksum(state.target);
  const auto before_pred = checksum(state.predictor);
  auto cfg = small_pretrain(1);
  cfg.optimizer.lr = 0.0;
  cfg.fixed_mu = 1.0;
  const auto corpus = small_corpus(4, 2);
  std::vector<const CsiWindow*> batch;
  for (const auto& w : corpus) batch.push_back(&w);
  const auto rec = pretrain_step(state, sincos_positions<float>(state.config.patch), batch, cfg, 10, CounterRng(1));
  CHECK(std::isfinite(rec.loss));
  CHECK(rec.target_std > 0.0);
  CHECK(checksum(state.online) == before_online);
  CHECK(checksum(state.target) == before_target);
  CHECK(checksum(state.predictor) == before_pred);
  CHECK(state.step == 1);
}

TEST_CASE("pretraining is reproducible and independent of the thread count") {
  const auto corpus = small_corpus(12, 3);
  auto cfg = small_pretrain(2);
  const auto a = pretrain(corpus, cfg, init_model<float>(small_model(), cfg.seed));
  const auto b = pretrain(corpus, cfg, init_model<float>(small_model(), cfg.seed));
  cfg.threads = 3;
  const auto c = pretrain(corpus, cfg, init_model<float>(small_model(), cfg.seed));
  CHECK(a.log == b.log);
  CHECK(a.log == c.log);
  CHECK(checksum(a.state.online) == checksum(c.state.online));
  CHECK(checksum(a.state.target) == checksum(c.state.target));
  CHECK(checksum(a.state.predictor) == checksum(c.state.predictor));
  CHECK(a.log.size() == 6);
  CHECK(a.state.step == 6);
  CHECK(a.state.epoch == 2);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TempDir dir("resume");
  const auto corpus = small_corpus(10, 4);
  const auto cfg = small_pretrain(4);
  const auto full = pretrain(corpus, cfg, init_model<float>(small_model(), cfg.seed), dir / "full");
  CHECK(std::filesystem::exists(dir / "full" / "checkpoint_epoch2.bin"));
  CHECK(std::filesystem::exists(dir / "full" / "checkpoint_epoch4.manifest"));

  auto mid = load_checkpoint(dir / "full" / "checkpoint_epoch2", small_model());
  CHECK(mid.epoch == 2);
  const auto rest = pretrain(corpus, cfg, std::move(mid));
  CHECK(checksum(rest.state.online) == checksum(full.state.online));
  CHECK(checksum(rest.state.online_v) == checksum(full.state.online_v));
  REQUIRE(rest.log.size() == 6);
  CHECK(std::equal(rest.log.begin(), rest.log.end(), full.log.end() - 6));

  const auto logged = read_loss_log(dir / "full" / "loss_log.csv");
  REQUIRE(logged.size() == full.log.size());
  for (std::size_t i = 0; i < logged.size(); ++i) {
    CHECK(logged[i].step == full.log[i].step);
    CHECK(logged[i].loss == doctest::Approx(full.log[i].loss).epsilon(1e-7));
  }
}

TEST_CASE("pretrain config validation and key mapping") {
  auto kv = KeyValueConfig::from_string("epochs=3\nbatch_size=8\nlr=0.01\nstrategy=time\neta=0.5\nseed=9\n");
  const auto cfg = pretrain_config_from(kv);
  CHECK(cfg.epochs == 3);
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.optimizer.lr == doctest::Approx(0.01));
  CHECK(cfg.mask.strategy == MaskStrategy::Time);
  CHECK(cfg.mask.eta == doctest::Approx(0.5));
  CHECK(cfg.seed == 9);
  CHECK_THROWS_AS(pretrain_config_from(KeyValueConfig::from_string("epochs=0\n")), Error);
  CHECK_THROWS_AS(pretrain_config_from(KeyValueConfig::from_string("eta=2\n")), Error);
  CHECK_THROWS_AS(pretrain_config_from(KeyValueConfig::from_string("strategy=zigzag\n")), Error);

  const auto m = model_config_from(KeyValueConfig::from_string(
      "subcarriers=32\ntime_steps=64\npatch_k=4\npatch_t=8\nembed_dim=64\nencoder_heads=4\npredictor_dim=48\n"));
  CHECK(m.patch.num_patches() == 64);
  CHECK(m.embed_dim() == 64);
  CHECK(m.predictor_dim == 48);
}

TEST_CASE("model config rejects widths that heads do not divide") {
  CHECK_THROWS_AS(model_config_from(KeyValueConfig::from_string(
                      "subcarriers=32\ntime_steps=64\npatch_k=4\npatch_t=8\nembed_dim=64\nencoder_heads=3\n")),
                  Error);
  CHECK_THROWS_AS(pretrain(std::vector<CsiWindow>{}, small_pretrain(1), init_model<float>(small_model(), 1)), Error);
  CHECK_THROWS_AS(pretrain(std::vector<CsiWindow>{CsiWindow(1, 8, 8)}, small_pretrain(1),
                           init_model<float>(small_model(), 1)),
                  Error);
}
