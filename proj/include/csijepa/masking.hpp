#pragma once

#include "csijepa/core.hpp"
#include "csijepa/rng.hpp"

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

namespace csijepa {

enum class MaskStrategy { ChannelAware, Time, Subcarrier, Rect };

std::string_view to_string(MaskStrategy strategy) noexcept;
/// Accepts `channel-aware`, `time`, `subcarrier`, `rect`.
MaskStrategy parse_mask_strategy(std::string_view tag);

/// Temporal and subcarrier amplitude-difference maps averaged over channels.
/// Storage is K x T (row = subcarrier, column = time); entry (k, t) is the
/// value the formulas index as (t, k). The first time column of `temporal`
/// and the first subcarrier row of `spectral` are zero.
struct VariationMap {
  Eigen::MatrixXd temporal;
  Eigen::MatrixXd spectral;
  Eigen::MatrixXd combined;
  double lambda = 0.5;
};

VariationMap variation_map(const CsiWindow& window, double lambda);

/// Mean of the combined map over each patch, N_K x N_T.
struct PatchScoreGrid {
  Eigen::MatrixXd scores;
};

PatchScoreGrid patch_scores(const VariationMap& map, const PatchConfig& cfg);

struct BlockDims {
  int k = 1;  ///< rows on the patch grid (subcarrier axis)
  int t = 1;  ///< columns on the patch grid (time axis)
  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

struct BlockSampling {
  double area_min = 0.15;
  double area_max = 0.30;
  double aspect_min = 0.5;
  double aspect_max = 2.0;
};

/// Block shape for a given area fraction and aspect ratio, rounded half away
/// from zero, clamped to the grid, and shrunk so at least one patch stays
/// visible.
BlockDims block_dims_for(int grid_k, int grid_t, double area_fraction, double aspect);

/// Draws area fraction then aspect ratio uniformly from the ranges.
BlockDims sample_block_dims(int grid_k, int grid_t, const BlockSampling& ranges, CounterRng& rng);

/// Mean patch score inside every feasible block, indexed by anchor (a, b):
/// shape (N_K - b_K + 1) x (N_T - b_T + 1). Uses a summed-area table.
Eigen::MatrixXd score_blocks(const PatchScoreGrid& scores, BlockDims dims);

/// Anchor distribution mixing score-proportional and uniform sampling:
/// (1 - eta) (R + eps) / sum(R + eps) + eta / |anchors|.
Eigen::MatrixXd mask_probabilities(const Eigen::MatrixXd& block_scores, double eta, double eps);

/// One target rectangle plus the complementary context set. Indices are
/// row-major token indices i * N_T + j.
struct MaskSpec {
  int grid_k = 0;
  int grid_t = 0;
  int anchor_k = 0;
  int anchor_t = 0;
  BlockDims dims;
  MaskStrategy strategy = MaskStrategy::ChannelAware;
  std::vector<int> target;
  std::vector<int> context;

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

MaskSpec make_mask(int grid_k, int grid_t, int anchor_k, int anchor_t, BlockDims dims, MaskStrategy strategy);

/// Inverse-CDF draw over row-major anchors from `mask_probabilities`.
MaskSpec sample_target(const Eigen::MatrixXd& block_scores, BlockDims dims, int grid_k, int grid_t, double eta,
                       double eps, CounterRng& rng);

/// Time, subcarrier or uniform-rectangle masks that ignore the signal.
MaskSpec sample_baseline(MaskStrategy strategy, int grid_k, int grid_t, const BlockSampling& ranges,
                         CounterRng& rng);

struct MaskPolicy {
  MaskStrategy strategy = MaskStrategy::ChannelAware;
  double lambda = 0.5;
  double eta = 0.3;
  double eps = 1e-6;
  BlockSampling ranges;
};

/// Full per-sample masking: block shape, then placement per the strategy.
MaskSpec sample_mask(const CsiWindow& window, const PatchConfig& cfg, const MaskPolicy& policy, CounterRng& rng);

/// `a b bK bT strategy`
std::string to_debug_string(const MaskSpec& mask);
MaskSpec parse_debug_string(std::string_view line, int grid_k, int grid_t);

}  // namespace csijepa
