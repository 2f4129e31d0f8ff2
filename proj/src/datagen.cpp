#include "csijepa/datagen.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace csijepa {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Hann taper over [0, n), zero at both ends' outer neighbours.
double hann(int i, int n) { return 0.5 - 0.5 * std::cos(kTwoPi * (i + 1) / (n + 1)); }

std::uint64_t task_stream(SynthTask task) { return task == SynthTask::Activity ? 11 : 12; }

void add_burst(const SynthSpec& spec, CsiWindow& w, EventInfo& info, bool along_time, double phase) {
  for (int c = 0; c < spec.channels; ++c) {
    for (int dk = 0; dk < info.k_extent; ++dk) {
      for (int dt = 0; dt < info.t_extent; ++dt) {
        const double carrier = along_time ? std::cos(kTwoPi * dt / spec.burst_period + phase)
                                          : std::cos(kTwoPi * dk / spec.burst_period + phase);
        w.at(c, info.k0 + dk, info.t0 + dt) += static_cast<float>(
            spec.event_amplitude * hann(dk, info.k_extent) * hann(dt, info.t_extent) * carrier);
      }
    }
  }
}

void add_tone(const SynthSpec& spec, CsiWindow& w, const EventInfo& info, double period, double phase) {
  for (int c = 0; c < spec.channels; ++c) {
    for (int dk = 0; dk < info.k_extent; ++dk) {
      for (int t = 0; t < spec.time_steps; ++t) {
        const double envelope = 0.5 * (1.0 + std::sin(kTwoPi * t / period + phase));
        w.at(c, info.k0 + dk, t) += static_cast<float>(spec.event_amplitude * envelope);
      }
    }
  }
}

}  // namespace

std::string_view to_string(SynthTask task) noexcept { return task == SynthTask::Activity ? "activity" : "burst"; }

SynthTask parse_synth_task(std::string_view tag) {
  if (tag == "activity") return SynthTask::Activity;
  if (tag == "burst") return SynthTask::Burst;
  throw Error("unknown synthetic task '" + std::string(tag) + "' (expected activity|burst)");
}

void SynthSpec::validate() const {
  (void)PatchConfig(channels, subcarriers, time_steps, patch_k, patch_t, 4);
  if (num_classes < 2) throw Error("synth spec: num_classes must be at least 2");
  if (task == SynthTask::Burst && num_classes != 2) throw Error("synth spec: the burst task has exactly 2 classes");
  if (train_per_class < 1 || val_per_class < 1 || test_per_class < 1) {
    throw Error("synth spec: every split needs at least one sample per class");
  }
  if (background_rank < 0) throw Error("synth spec: background_rank must be non-negative");
  if (noise_std < 0.0) throw Error("synth spec: noise_std must be non-negative");
  if (burst_k < 1 || burst_k > subcarriers || burst_t < 1 || burst_t > time_steps) {
    throw Error("synth spec: burst extent must fit inside the window");
  }
  if (tone_band < 1 || tone_band > subcarriers) throw Error("synth spec: tone_band must fit inside the window");
  if (!(burst_period > 0.0) || !(tone_period > 0.0)) throw Error("synth spec: periods must be positive");
}

CsiWindow synth_background(const SynthSpec& spec, CounterRng& rng) {
  CsiWindow w(spec.channels, spec.subcarriers, spec.time_steps);
  for (int c = 0; c < spec.channels; ++c) {
    auto x = w.channel(c);
    for (int r = 0; r < spec.background_rank; ++r) {
      const double amp = spec.background_amplitude * rng.uniform(0.5, 1.0) / (r + 1);
      const double fk = rng.uniform(0.2, 1.5);
      const double ft = rng.uniform(0.2, 1.5);
      const double pk = rng.uniform(0.0, kTwoPi);
      const double pt = rng.uniform(0.0, kTwoPi);
      Eigen::VectorXf u(spec.subcarriers);
      Eigen::RowVectorXf v(spec.time_steps);
      for (int k = 0; k < spec.subcarriers; ++k) u(k) = static_cast<float>(std::sin(kTwoPi * fk * k / spec.subcarriers + pk));
      for (int t = 0; t < spec.time_steps; ++t) v(t) = static_cast<float>(amp * std::sin(kTwoPi * ft * t / spec.time_steps + pt));
      x += u * v;
    }
  }
  return w;
}

SynthSample synth_raw_sample(const SynthSpec& spec, int label, CounterRng rng, bool with_event) {
  if (label < 0 || label >= spec.num_classes) throw Error("synth sample: label out of range");
  CounterRng bg_rng = rng.split(0);
  CounterRng ev_rng = rng.split(1);
  CounterRng noise_rng = rng.split(2);

  SynthSample s{synth_background(spec, bg_rng), {}};
  s.event.label = label;
  const double phase = ev_rng.uniform(0.0, kTwoPi);
  const bool burst = spec.task == SynthTask::Burst || label == 0;
  if (burst) {
    s.event.k_extent = spec.burst_k;
    s.event.t_extent = spec.burst_t;
    s.event.k0 = static_cast<int>(ev_rng.below(static_cast<std::uint64_t>(spec.subcarriers - spec.burst_k + 1)));
    s.event.t0 = static_cast<int>(ev_rng.below(static_cast<std::uint64_t>(spec.time_steps - spec.burst_t + 1)));
    if (with_event) add_burst(spec, s.window, s.event, spec.task == SynthTask::Activity || label == 0, phase);
  } else {
    s.event.k_extent = spec.tone_band;
    s.event.t_extent = spec.time_steps;
    s.event.k0 = static_cast<int>(ev_rng.below(static_cast<std::uint64_t>(spec.subcarriers - spec.tone_band + 1)));
    if (with_event) add_tone(spec, s.window, s.event, spec.tone_period / label, phase);
  }
  if (spec.noise_std > 0.0) {
    for (float& v : s.window.values()) v += static_cast<float>(spec.noise_std * noise_rng.normal());
  }
  return s;
}

SynthSample synth_sample(const SynthSpec& spec, Split split, std::size_t index) {
  const CounterRng rng = CounterRng(spec.seed).split(task_stream(spec.task)).split(static_cast<std::uint64_t>(split));
  SynthSample s = synth_raw_sample(spec, static_cast<int>(index % static_cast<std::size_t>(spec.num_classes)),
                                   rng.split(index));
  s.window = standardize(s.window);
  return s;
}

ProbeTask generate(const SynthSpec& spec) {
  spec.validate();
  ProbeTask task;
  task.name = std::string(to_string(spec.task));
  task.num_classes = spec.num_classes;
  auto fill = [&](LabeledSet& set, Split split, int per_class) {
    const auto n = static_cast<std::size_t>(per_class) * static_cast<std::size_t>(spec.num_classes);
    set.windows.reserve(n);
    set.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      SynthSample s = synth_sample(spec, split, i);
      set.labels.push_back(s.event.label);
      set.windows.push_back(std::move(s.window));
    }
  };
  fill(task.train, Split::Train, spec.train_per_class);
  fill(task.val, Split::Val, spec.val_per_class);
  fill(task.test, Split::Test, spec.test_per_class);
  return task;
}

SynthSpec synth_spec_from(const KeyValueConfig& kv) {
  SynthSpec s;
  s.task = parse_synth_task(kv.get_string("task", std::string(to_string(s.task))));
  s.channels = static_cast<int>(kv.get_int("channels", s.channels));
  s.subcarriers = static_cast<int>(kv.get_int("subcarriers", s.subcarriers));
  s.time_steps = static_cast<int>(kv.get_int("time_steps", s.time_steps));
  s.patch_k = static_cast<int>(kv.get_int("patch_k", s.patch_k));
  s.patch_t = static_cast<int>(kv.get_int("patch_t", s.patch_t));
  s.num_classes = static_cast<int>(kv.get_int("num_classes", s.num_classes));
  s.train_per_class = static_cast<int>(kv.get_int("train_per_class", s.train_per_class));
  s.val_per_class = static_cast<int>(kv.get_int("val_per_class", s.val_per_class));
  s.test_per_class = static_cast<int>(kv.get_int("test_per_class", s.test_per_class));
  s.background_rank = static_cast<int>(kv.get_int("background_rank", s.background_rank));
  s.background_amplitude = kv.get_double("background_amplitude", s.background_amplitude);
  s.noise_std = kv.get_double("noise_std", s.noise_std);
  s.event_amplitude = kv.get_double("event_amplitude", s.event_amplitude);
  s.burst_k = static_cast<int>(kv.get_int("burst_k", s.burst_k));
  s.burst_t = static_cast<int>(kv.get_int("burst_t", s.burst_t));
  s.burst_period = kv.get_double("burst_period", s.burst_period);
  s.tone_band = static_cast<int>(kv.get_int("tone_band", s.tone_band));
  s.tone_period = kv.get_double("tone_period", s.tone_period);
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  s.validate();
  return s;
}

void write_spec_json(const std::filesystem::path& path, const SynthSpec& s) {
  const nlohmann::json j = {{"task", to_string(s.task)},
                            {"channels", s.channels},
                            {"subcarriers", s.subcarriers},
                            {"time_steps", s.time_steps},
                            {"patch_k", s.patch_k},
                            {"patch_t", s.patch_t},
                            {"num_classes", s.num_classes},
                            {"train_per_class", s.train_per_class},
                            {"val_per_class", s.val_per_class},
                            {"test_per_class", s.test_per_class},
                            {"background_rank", s.background_rank},
                            {"background_amplitude", s.background_amplitude},
                            {"noise_std", s.noise_std},
                            {"event_amplitude", s.event_amplitude},
                            {"burst_k", s.burst_k},
                            {"burst_t", s.burst_t},
                            {"burst_period", s.burst_period},
                            {"tone_band", s.tone_band},
                            {"tone_period", s.tone_period},
                            {"seed", s.seed}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_spec_json: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace csijepa
