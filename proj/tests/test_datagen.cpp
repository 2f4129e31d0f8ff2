#include "csijepa/datagen.hpp"
#include "csijepa/masking.hpp"
#include "temp_dir.hpp"

#include <Eigen/SVD>
#include <doctest.h>

#include <algorithm>
#include <fstream>

using namespace csijepa;

namespace {

SynthSpec quiet(SynthTask task) {
  SynthSpec s;
  s.task = task;
  s.background_amplitude = 0.0;
  s.noise_std = 0.0;
  return s;
}

/// Mean of `m` inside and outside the event box.
std::pair<double, double> inside_outside(const Eigen::MatrixXd& m, const EventInfo& e) {
  double in = 0.0, out = 0.0;
  int n_in = 0, n_out = 0;
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    for (Eigen::Index t = 0; t < m.cols(); ++t) {
      const bool inside = k >= e.k0 && k < e.k0 + e.k_extent && t >= e.t0 && t < e.t0 + e.t_extent;
      (inside ? in : out) += m(k, t);
      ++(inside ? n_in : n_out);
    }
  }
  return {in / n_in, n_out ? out / n_out : 0.0};
}

}  // namespace

TEST_CASE("background rank never exceeds the configured rank") {
  SynthSpec spec;
  spec.channels = 2;
  for (int rank : {0, 1, 3}) {
    spec.background_rank = rank;
    CounterRng rng(rank + 1);
    const CsiWindow w = synth_background(spec, rng);
    for (int c = 0; c < 2; ++c) {
      const Eigen::MatrixXd x = w.channel(c).cast<double>();
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
      svd.setThreshold(1e-5);
      CHECK(svd.rank() <= rank);
    }
  }
}

TEST_CASE("bursts are localized: energy and variation concentrate inside the event box") {
  for (SynthTask task : {SynthTask::Activity, SynthTask::Burst}) {
    const SynthSpec spec = quiet(task);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const SynthSample s = synth_raw_sample(spec, 0, CounterRng(seed));
      const Eigen::MatrixXd x = s.window.channel(0).cast<double>();
      const auto [in, out] = inside_outside(x.cwiseAbs2(), s.event);
      CHECK(in > 0.0);
      CHECK(out == 0.0);
    }
  }
  SynthSpec noisy;
  noisy.task = SynthTask::Burst;
  for (int label : {0, 1}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const SynthSample s = synth_raw_sample(noisy, label, CounterRng(seed));
      const auto [in, out] = inside_outside(variation_map(s.window, 0.5).combined, s.event);
      CHECK(in > 2.0 * out);
    }
  }
}

TEST_CASE("burst classes oscillate along different axes") {
  const SynthSpec spec = quiet(SynthTask::Burst);
  const SynthSample time_burst = synth_raw_sample(spec, 0, CounterRng(3));
  const SynthSample band_burst = synth_raw_sample(spec, 1, CounterRng(3));
  const VariationMap a = variation_map(time_burst.window, 0.5);
  const VariationMap b = variation_map(band_burst.window, 0.5);
  CHECK(a.temporal.sum() > a.spectral.sum());
  CHECK(b.spectral.sum() > b.temporal.sum());
}

TEST_CASE("tone classes modulate a band for the whole window") {
  SynthSpec spec = quiet(SynthTask::Activity);
  spec.num_classes = 3;
  const SynthSample s = synth_raw_sample(spec, 2, CounterRng(4));
  CHECK(s.event.t_extent == spec.time_steps);
  CHECK(s.event.k_extent == spec.tone_band);
  const Eigen::MatrixXd x = s.window.channel(0).cast<double>();
  const auto [in, out] = inside_outside(x.cwiseAbs2(), s.event);
  CHECK(in > 0.0);
  CHECK(out == 0.0);
}

TEST_CASE("samples are deterministic, standardized and distinct across splits") {
  SynthSpec spec;
  spec.seed = 9;
  const SynthSample a = synth_sample(spec, Split::Train, 5);
  const SynthSample b = synth_sample(spec, Split::Train, 5);
  const auto same = [](const CsiWindow& x, const CsiWindow& y) {
    return std::ranges::equal(x.values(), y.values());
  };
  CHECK(same(a.window, b.window));
  CHECK(a.event.label == 1);
  CHECK_FALSE(same(synth_sample(spec, Split::Test, 5).window, a.window));
  CHECK_FALSE(same(synth_sample(spec, Split::Train, 6).window, a.window));
  spec.seed = 10;
  CHECK_FALSE(same(synth_sample(spec, Split::Train, 5).window, a.window));

  double mean = 0.0;
  for (float v : a.window.values()) mean += v;
  CHECK(std::abs(mean / static_cast<double>(a.window.size())) < 1e-5);
}

TEST_CASE("generate sizes the splits and balances labels") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.train_per_class = 4;
  spec.val_per_class = 2;
  spec.test_per_class = 3;
  const ProbeTask task = generate(spec);
  CHECK(task.name == "activity");
  CHECK(task.num_classes == 3);
  CHECK(task.train.windows.size() == 12);
  CHECK(task.val.labels.size() == 6);
  CHECK(task.test.labels == std::vector<int>{0, 1, 2, 0, 1, 2, 0, 1, 2});
}

TEST_CASE("synthetic task validation and key mapping") {
  SynthSpec bad;
  bad.task = SynthTask::Burst;
  bad.num_classes = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = SynthSpec{};
  bad.burst_t = 100;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = SynthSpec{};
  bad.noise_std = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(parse_synth_task("walk"), Error);

  const SynthSpec s = synth_spec_from(KeyValueConfig::from_string("task=burst\nburst_k=20\nevent_amplitude=0.7\nseed=4\n"));
  CHECK(s.task == SynthTask::Burst);
  CHECK(s.burst_k == 20);
  CHECK(s.event_amplitude == 0.7);
  CHECK(s.seed == 4);

  TempDir dir("spec_json");
  write_spec_json(dir / "spec.json", s);
  std::ifstream in(dir / "spec.json");
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  CHECK(text.find("\"burst\"") != std::string::npos);
}
