#include "csijepa/masking.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace csijepa {

std::string_view to_string(MaskStrategy strategy) noexcept {
  switch (strategy) {
    case MaskStrategy::ChannelAware: return "channel-aware";
    case MaskStrategy::Time: return "time";
    case MaskStrategy::Subcarrier: return "subcarrier";
    case MaskStrategy::Rect: return "rect";
  }
  return "?";
}

MaskStrategy parse_mask_strategy(std::string_view tag) {
  if (tag == "channel-aware") return MaskStrategy::ChannelAware;
  if (tag == "time") return MaskStrategy::Time;
  if (tag == "subcarrier") return MaskStrategy::Subcarrier;
  if (tag == "rect") return MaskStrategy::Rect;
  throw Error("unknown mask strategy '" + std::string(tag) + "' (expected channel-aware|time|subcarrier|rect)");
}

VariationMap variation_map(const CsiWindow& window, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("variation_map: lambda must lie in [0, 1]");
  const int channels = window.channels();
  const int k_count = window.subcarriers();
  const int t_count = window.time_steps();

  VariationMap map;
  map.lambda = lambda;
  map.temporal = Eigen::MatrixXd::Zero(k_count, t_count);
  map.spectral = Eigen::MatrixXd::Zero(k_count, t_count);
  for (int c = 0; c < channels; ++c) {
    const Eigen::MatrixXd x = window.channel(c).cast<double>();
    map.temporal.rightCols(t_count - 1) += (x.rightCols(t_count - 1) - x.leftCols(t_count - 1)).cwiseAbs();
    map.spectral.bottomRows(k_count - 1) += (x.bottomRows(k_count - 1) - x.topRows(k_count - 1)).cwiseAbs();
  }
  map.temporal /= channels;
  map.spectral /= channels;
  map.combined = lambda * map.temporal + (1.0 - lambda) * map.spectral;
  return map;
}

PatchScoreGrid patch_scores(const VariationMap& map, const PatchConfig& cfg) {
  if (map.combined.rows() != cfg.subcarriers() || map.combined.cols() != cfg.time_steps()) {
    throw Error("patch_scores: variation map is " + std::to_string(map.combined.rows()) + "x" +
                std::to_string(map.combined.cols()) + ", patch config expects " + std::to_string(cfg.subcarriers()) +
                "x" + std::to_string(cfg.time_steps()));
  }
  PatchScoreGrid grid{Eigen::MatrixXd(cfg.grid_k(), cfg.grid_t())};
  for (int i = 0; i < cfg.grid_k(); ++i) {
    for (int j = 0; j < cfg.grid_t(); ++j) {
      grid.scores(i, j) = map.combined.block(i * cfg.patch_k(), j * cfg.patch_t(), cfg.patch_k(), cfg.patch_t()).mean();
    }
  }
  return grid;
}

BlockDims block_dims_for(int grid_k, int grid_t, double area_fraction, double aspect) {
  const double area = area_fraction * grid_k * grid_t;
  BlockDims dims{static_cast<int>(std::round(std::sqrt(area * aspect))),
                 static_cast<int>(std::round(std::sqrt(area / aspect)))};
  dims.k = std::clamp(dims.k, 1, grid_k);
  dims.t = std::clamp(dims.t, 1, grid_t);
  if (dims.k == grid_k && dims.t == grid_t) {
    // shrink the longer side; on a tie prefer whichever axis can shrink
    if ((dims.k >= dims.t && dims.k > 1) || dims.t == 1) {
      --dims.k;
    } else {
      --dims.t;
    }
  }
  return dims;
}

BlockDims sample_block_dims(int grid_k, int grid_t, const BlockSampling& ranges, CounterRng& rng) {
  const double area = rng.uniform(ranges.area_min, ranges.area_max);
  const double aspect = rng.uniform(ranges.aspect_min, ranges.aspect_max);
  return block_dims_for(grid_k, grid_t, area, aspect);
}

Eigen::MatrixXd score_blocks(const PatchScoreGrid& scores, BlockDims dims) {
  const auto& m = scores.scores;
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  if (dims.k < 1 || dims.t < 1 || dims.k > rows || dims.t > cols) {
    throw Error("score_blocks: block " + std::to_string(dims.k) + "x" + std::to_string(dims.t) +
                " does not fit the patch grid");
  }
  // sat(i, j) = sum of m over [0, i) x [0, j)
  Eigen::MatrixXd sat = Eigen::MatrixXd::Zero(rows + 1, cols + 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) sat(i + 1, j + 1) = m(i, j) + sat(i, j + 1) + sat(i + 1, j) - sat(i, j);
  }
  const double area = static_cast<double>(dims.k) * dims.t;
  Eigen::MatrixXd out(rows - dims.k + 1, cols - dims.t + 1);
  for (Eigen::Index a = 0; a < out.rows(); ++a) {
    for (Eigen::Index b = 0; b < out.cols(); ++b) {
      const double sum = sat(a + dims.k, b + dims.t) - sat(a, b + dims.t) - sat(a + dims.k, b) + sat(a, b);
      out(a, b) = sum / area;
    }
  }
  return out;
}

Eigen::MatrixXd mask_probabilities(const Eigen::MatrixXd& block_scores, double eta, double eps) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw Error("mask_probabilities: eta must lie in [0, 1]");
  if (block_scores.size() == 0) throw Error("mask_probabilities: no feasible anchors");
  if ((block_scores.array() < 0.0).any()) throw Error("mask_probabilities: negative block score");
  const Eigen::ArrayXXd shifted = block_scores.array() + eps;
  const double total = shifted.sum();
  const double uniform = 1.0 / static_cast<double>(block_scores.size());
  if (!(total > 0.0)) return Eigen::MatrixXd::Constant(block_scores.rows(), block_scores.cols(), uniform);
  return ((1.0 - eta) * shifted / total + eta * uniform).matrix();
}

MaskSpec make_mask(int grid_k, int grid_t, int anchor_k, int anchor_t, BlockDims dims, MaskStrategy strategy) {
  if (anchor_k < 0 || anchor_t < 0 || dims.k < 1 || dims.t < 1 || anchor_k + dims.k > grid_k ||
      anchor_t + dims.t > grid_t) {
    throw Error("make_mask: block does not fit inside the patch grid");
  }
  if (dims.k * dims.t >= grid_k * grid_t) throw Error("make_mask: block leaves no context patch");
  MaskSpec mask{grid_k, grid_t, anchor_k, anchor_t, dims, strategy, {}, {}};
  mask.target.reserve(static_cast<std::size_t>(dims.k) * dims.t);
  mask.context.reserve(static_cast<std::size_t>(grid_k) * grid_t - mask.target.capacity());
  for (int i = 0; i < grid_k; ++i) {
    for (int j = 0; j < grid_t; ++j) {
      const bool inside = i >= anchor_k && i < anchor_k + dims.k && j >= anchor_t && j < anchor_t + dims.t;
      (inside ? mask.target : mask.context).push_back(i * grid_t + j);
    }
  }
  return mask;
}

namespace {

Eigen::Index draw_index(const Eigen::MatrixXd& probs, CounterRng& rng) {
  // row-major anchor order: (a, b) -> a * cols + b
  const double u = rng.uniform();
  double cumulative = 0.0;
  Eigen::Index last_positive = -1;
  for (Eigen::Index a = 0; a < probs.rows(); ++a) {
    for (Eigen::Index b = 0; b < probs.cols(); ++b) {
      const double p = probs(a, b);
      if (p <= 0.0) continue;
      cumulative += p;
      last_positive = a * probs.cols() + b;
      if (u < cumulative) return last_positive;
    }
  }
  return last_positive;
}

}  // namespace

MaskSpec sample_target(const Eigen::MatrixXd& block_scores, BlockDims dims, int grid_k, int grid_t, double eta,
                       double eps, CounterRng& rng) {
  if (block_scores.rows() != grid_k - dims.k + 1 || block_scores.cols() != grid_t - dims.t + 1) {
    throw Error("sample_target: block score shape does not match block dims");
  }
  const Eigen::MatrixXd probs = mask_probabilities(block_scores, eta, eps);
  const Eigen::Index flat = draw_index(probs, rng);
  const auto cols = probs.cols();
  return make_mask(grid_k, grid_t, static_cast<int>(flat / cols), static_cast<int>(flat % cols), dims,
                   MaskStrategy::ChannelAware);
}

MaskSpec sample_baseline(MaskStrategy strategy, int grid_k, int grid_t, const BlockSampling& ranges,
                         CounterRng& rng) {
  switch (strategy) {
    case MaskStrategy::Time: {
      if (grid_t < 2) throw Error("time masking needs at least 2 time patches");
      const double area = rng.uniform(ranges.area_min, ranges.area_max);
      const int width = std::clamp(static_cast<int>(std::round(area * grid_t)), 1, grid_t - 1);
      const auto b = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid_t - width + 1)));
      return make_mask(grid_k, grid_t, 0, b, {grid_k, width}, strategy);
    }
    case MaskStrategy::Subcarrier: {
      if (grid_k < 2) throw Error("subcarrier masking needs at least 2 subcarrier patches");
      const double area = rng.uniform(ranges.area_min, ranges.area_max);
      const int height = std::clamp(static_cast<int>(std::round(area * grid_k)), 1, grid_k - 1);
      const auto a = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid_k - height + 1)));
      return make_mask(grid_k, grid_t, a, 0, {height, grid_t}, strategy);
    }
    case MaskStrategy::Rect: {
      const BlockDims dims = sample_block_dims(grid_k, grid_t, ranges, rng);
      const auto anchors = static_cast<std::uint64_t>(grid_k - dims.k + 1) * (grid_t - dims.t + 1);
      const auto flat = static_cast<int>(rng.below(anchors));
      const int cols = grid_t - dims.t + 1;
      return make_mask(grid_k, grid_t, flat / cols, flat % cols, dims, strategy);
    }
    case MaskStrategy::ChannelAware: break;
  }
  throw Error("sample_baseline: channel-aware masking needs a window; use sample_mask");
}

MaskSpec sample_mask(const CsiWindow& window, const PatchConfig& cfg, const MaskPolicy& policy, CounterRng& rng) {
  if (policy.strategy != MaskStrategy::ChannelAware) {
    return sample_baseline(policy.strategy, cfg.grid_k(), cfg.grid_t(), policy.ranges, rng);
  }
  const BlockDims dims = sample_block_dims(cfg.grid_k(), cfg.grid_t(), policy.ranges, rng);
  const auto scores = patch_scores(variation_map(window, policy.lambda), cfg);
  return sample_target(score_blocks(scores, dims), dims, cfg.grid_k(), cfg.grid_t(), policy.eta, policy.eps, rng);
}

std::string to_debug_string(const MaskSpec& mask) {
  std::ostringstream out;
  out << mask.anchor_k << ' ' << mask.anchor_t << ' ' << mask.dims.k << ' ' << mask.dims.t << ' '
      << to_string(mask.strategy);
  return out.str();
}

MaskSpec parse_debug_string(std::string_view line, int grid_k, int grid_t) {
  std::istringstream in{std::string(line)};
  int a = 0, b = 0, bk = 0, bt = 0;
  std::string tag;
  if (!(in >> a >> b >> bk >> bt >> tag)) throw Error("parse_debug_string: expected 'a b bK bT strategy'");
  return make_mask(grid_k, grid_t, a, b, {bk, bt}, parse_mask_strategy(tag));
}

}  // namespace csijepa
