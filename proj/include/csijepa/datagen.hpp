#pragma once

#include "csijepa/config.hpp"
#include "csijepa/probe.hpp"
#include "csijepa/rng.hpp"

#include <filesystem>
#include <string>

namespace csijepa {

/// Which class archetypes a synthetic task uses.
///
/// activity: class 0 is a localized burst of fast temporal oscillation at a
/// random position; class c >= 1 is a periodic modulation (period
/// tone_period / c) of a contiguous subcarrier band.
/// burst: both classes are localized bursts at random positions; class 0
/// oscillates along time, class 1 along subcarriers.
enum class SynthTask { Activity, Burst };

std::string_view to_string(SynthTask task) noexcept;
SynthTask parse_synth_task(std::string_view tag);

struct SynthSpec {
  SynthTask task = SynthTask::Activity;
  int channels = 1;
  int subcarriers = 32;
  int time_steps = 64;
  int patch_k = 4;
  int patch_t = 8;
  int num_classes = 2;
  int train_per_class = 600;
  int val_per_class = 100;
  int test_per_class = 200;
  int background_rank = 3;
  double background_amplitude = 1.0;
  double noise_std = 0.1;
  double event_amplitude = 1.5;
  int burst_k = 8;
  int burst_t = 16;
  double burst_period = 2.5;
  int tone_band = 8;
  double tone_period = 24.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Split : std::uint64_t { Train = 0, Val = 1, Test = 2 };

/// Where the class event landed; extents are in raw samples.
struct EventInfo {
  int label = 0;
  int k0 = 0;
  int t0 = 0;
  int k_extent = 0;
  int t_extent = 0;
};

struct SynthSample {
  CsiWindow window;
  EventInfo event;
};

/// Sum of `background_rank` outer products of slow sinusoids over k and t, per
/// channel. Rank per channel never exceeds `background_rank`.
CsiWindow synth_background(const SynthSpec& spec, CounterRng& rng);

/// Background + class event + Gaussian noise, before standardization.
SynthSample synth_raw_sample(const SynthSpec& spec, int label, CounterRng rng, bool with_event = true);

/// Sample `index` of `split`, standardized. Labels cycle through the classes,
/// so index i has label i % num_classes.
SynthSample synth_sample(const SynthSpec& spec, Split split, std::size_t index);

/// Labeled train/val/test splits. The unlabeled pretraining corpus is the
/// training split with labels dropped.
ProbeTask generate(const SynthSpec& spec);

SynthSpec synth_spec_from(const KeyValueConfig& kv);
void write_spec_json(const std::filesystem::path& path, const SynthSpec& spec);

}  // namespace csijepa
