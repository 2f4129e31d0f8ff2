#include "csijepa/masking.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace csijepa;

namespace {

CsiWindow seeded_window(int c, int k, int t, std::uint64_t seed) {
  CsiWindow w(c, k, t);
  CounterRng rng(seed);
  for (float& v : w.values()) v = static_cast<float>(rng.normal());
  return w;
}

PatchScoreGrid seeded_scores(int rows, int cols, std::uint64_t seed) {
  CounterRng rng(seed);
  PatchScoreGrid g{Eigen::MatrixXd(rows, cols)};
  for (Eigen::Index i = 0; i < g.scores.size(); ++i) g.scores.data()[i] = rng.uniform();
  return g;
}

}  // namespace

TEST_CASE("strategy tags round trip") {
  for (auto s : {MaskStrategy::ChannelAware, MaskStrategy::Time, MaskStrategy::Subcarrier, MaskStrategy::Rect}) {
    CHECK(parse_mask_strategy(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_mask_strategy("random"), Error);
}

TEST_CASE("variation map on a 1x2x2 window by hand") {
  CsiWindow w(1, 2, 2, {1.0f, 2.0f, 4.0f, 8.0f});  // rows k, columns t
  const auto m = variation_map(w, 0.5);
  CHECK(m.temporal(0, 0) == 0.0);
  CHECK(m.temporal(0, 1) == 1.0);
  CHECK(m.temporal(1, 1) == 4.0);
  CHECK(m.spectral(0, 1) == 0.0);
  CHECK(m.spectral(1, 0) == 3.0);
  CHECK(m.spectral(1, 1) == 6.0);
  CHECK(m.combined(0, 0) == 0.0);
  CHECK(m.combined(0, 1) == 0.5);
  CHECK(m.combined(1, 0) == 1.5);
  CHECK(m.combined(1, 1) == 5.0);
}

TEST_CASE("variation map matches the loop oracle, multi-channel and extreme lambda") {
  for (double lambda : {0.0, 0.3, 1.0}) {
    const CsiWindow w = seeded_window(3, 6, 9, 40);
    const auto m = variation_map(w, lambda);
    const auto o = oracle::variation(w, lambda);
    CHECK(oracle::max_abs_diff(m.temporal, o.temporal) <= 1e-6);
    CHECK(oracle::max_abs_diff(m.spectral, o.spectral) <= 1e-6);
    CHECK(oracle::max_abs_diff(m.combined, o.combined) <= 1e-6);
  }
  CHECK_THROWS_AS(variation_map(seeded_window(1, 4, 4, 1), 1.5), Error);
  CHECK_THROWS_AS(variation_map(seeded_window(1, 4, 4, 1), -0.1), Error);
}

TEST_CASE("patch scores: uniform map, single cell, dimension mismatch") {
  const PatchConfig cfg(1, 8, 16, 4, 8, 8);
  VariationMap m;
  m.combined = Eigen::MatrixXd::Constant(8, 16, 0.7);
  CHECK(patch_scores(m, cfg).scores.isApproxToConstant(0.7));

  m.combined.setZero();
  m.combined(5, 9) = 1.0;  // patch (1, 1)
  const auto s = patch_scores(m, cfg).scores;
  CHECK(s(1, 1) == doctest::Approx(1.0 / 32.0));
  CHECK(s.sum() == doctest::Approx(1.0 / 32.0));

  const PatchConfig other(1, 8, 8, 4, 4, 8);
  CHECK_THROWS_AS(patch_scores(m, other), Error);
}

TEST_CASE("block dims follow the area and aspect law") {
  CHECK(block_dims_for(8, 8, 0.25, 1.0) == BlockDims{4, 4});
  CHECK(block_dims_for(1, 2, 0.5, 1.0) == BlockDims{1, 1});
  CHECK(block_dims_for(8, 8, 0.25, 4.0) == BlockDims{8, 2});
  // covering the grid is never allowed; the longer side shrinks
  CHECK(block_dims_for(2, 2, 1.0, 1.0) == BlockDims{1, 2});
  CHECK(block_dims_for(2, 3, 1.0, 1.0) == BlockDims{2, 2});
}

TEST_CASE("sampled block dims stay inside the rounded area range on a 29x20 grid") {
  CounterRng rng(17);
  const BlockSampling ranges;
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < 5000; ++i) {
    const BlockDims d = sample_block_dims(29, 20, ranges, rng);
    CHECK(d.k >= 1);
    CHECK(d.k <= 29);
    CHECK(d.t >= 1);
    CHECK(d.t <= 20);
    const int area = d.k * d.t;
    CHECK(area >= 77);   // (sqrt(87 a) - 1/2)(sqrt(87 / a) - 1/2) over a in [0.5, 2]
    CHECK(area <= 189);  // (sqrt(174 a) + 1/2)(sqrt(174 / a) + 1/2)
    seen.insert({d.k, d.t});
  }
  CHECK(seen.size() > 10);
}

TEST_CASE("block scores match brute-force anchor averaging") {
  const auto g = seeded_scores(7, 9, 3);
  for (BlockDims d : {BlockDims{3, 2}, BlockDims{1, 1}, BlockDims{7, 9}, BlockDims{2, 5}}) {
    const auto r = score_blocks(g, d);
    const auto o = oracle::block_means(oracle::to_grid(g.scores), d.k, d.t);
    CHECK(oracle::max_abs_diff(r, o) <= 1e-9);
  }
  CHECK((score_blocks(g, {1, 1}) - g.scores).cwiseAbs().maxCoeff() <= 1e-12);
  PatchScoreGrid flat{Eigen::MatrixXd::Constant(4, 4, 2.5)};
  CHECK(score_blocks(flat, {2, 3}).isApproxToConstant(2.5));
  CHECK_THROWS_AS(score_blocks(g, {8, 1}), Error);
  CHECK_THROWS_AS(score_blocks(g, {0, 1}), Error);
}

TEST_CASE("mask probabilities normalize and degenerate to uniform") {
  const auto r = score_blocks(seeded_scores(5, 5, 8), {2, 2});
  const auto p = mask_probabilities(r, 0.3, 1e-6);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK((p.array() > 0.0).all());
  const auto o = oracle::anchor_probabilities(oracle::to_grid(r), 0.3, 1e-6);
  CHECK(oracle::max_abs_diff(p, o) <= 1e-12);
  CHECK(mask_probabilities(r, 1.0, 1e-6).isApproxToConstant(1.0 / 16.0));
  CHECK(mask_probabilities(Eigen::MatrixXd::Zero(3, 3), 0.0, 0.0).isApproxToConstant(1.0 / 9.0));
  CHECK_THROWS_AS(mask_probabilities(r, 1.5, 1e-6), Error);
  CHECK_THROWS_AS(mask_probabilities(-r, 0.3, 1e-6), Error);
}

TEST_CASE("make_mask partitions the grid into target and context") {
  const MaskSpec m = make_mask(4, 5, 1, 2, {2, 3}, MaskStrategy::Rect);
  CHECK(m.target.size() == 6);
  CHECK(m.context.size() == 14);
  std::vector<int> all = m.target;
  all.insert(all.end(), m.context.begin(), m.context.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 20; ++i) CHECK(all[i] == i);
  CHECK(m.target.front() == 1 * 5 + 2);
  CHECK(m.target.back() == 2 * 5 + 4);
  CHECK_THROWS_AS(make_mask(4, 5, 3, 0, {2, 1}, MaskStrategy::Rect), Error);
  CHECK_THROWS_AS(make_mask(2, 2, 0, 0, {2, 2}, MaskStrategy::Rect), Error);
}

TEST_CASE("anchor sampling frequencies follow the enumerated distribution") {
  PatchScoreGrid g{Eigen::MatrixXd::Constant(4, 4, 0.1)};
  g.scores.topLeftCorner(2, 2).setConstant(1.0);
  const BlockDims dims{2, 2};
  const auto r = score_blocks(g, dims);
  const auto p = oracle::anchor_probabilities(oracle::to_grid(r), 0.3, 1e-6);
  CounterRng rng(5);
  const int draws = 20000;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < draws; ++i) {
    const MaskSpec m = sample_target(r, dims, 4, 4, 0.3, 1e-6, rng);
    counts(m.anchor_k, m.anchor_t) += 1.0;
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const double sigma = std::sqrt(draws * p[a][b] * (1.0 - p[a][b]));
      CHECK(std::abs(counts(a, b) - draws * p[a][b]) <= 4.0 * sigma);
    }
  }
}

TEST_CASE("baseline masks obey their geometry") {
  CounterRng rng(21);
  const BlockSampling ranges;
  for (int i = 0; i < 300; ++i) {
    const MaskSpec t = sample_baseline(MaskStrategy::Time, 8, 8, ranges, rng);
    CHECK(t.anchor_k == 0);
    CHECK(t.dims.k == 8);
    CHECK(t.dims.t >= 1);
    CHECK(t.dims.t <= 3);  // round(0.3 * 8) = 2, round(0.15 * 8) = 1
    const MaskSpec s = sample_baseline(MaskStrategy::Subcarrier, 8, 8, ranges, rng);
    CHECK(s.anchor_t == 0);
    CHECK(s.dims.t == 8);
    const MaskSpec r = sample_baseline(MaskStrategy::Rect, 8, 8, ranges, rng);
    CHECK(r.dims.k * r.dims.t >= 6);
    CHECK(r.dims.k * r.dims.t <= 25);
    CHECK(r.strategy == MaskStrategy::Rect);
  }
  CHECK_THROWS_AS(sample_baseline(MaskStrategy::Time, 8, 1, ranges, rng), Error);
  CHECK_THROWS_AS(sample_baseline(MaskStrategy::ChannelAware, 8, 8, ranges, rng), Error);
}

TEST_CASE("rect anchors are uniform over feasible positions") {
  CounterRng rng(2);
  BlockSampling fixed{0.25, 0.25, 1.0, 1.0};  // always 4 x 4 on 8 x 8
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(5, 5);
  const int draws = 25000;
  for (int i = 0; i < draws; ++i) {
    const MaskSpec m = sample_baseline(MaskStrategy::Rect, 8, 8, fixed, rng);
    REQUIRE(m.dims == BlockDims{4, 4});
    counts(m.anchor_k, m.anchor_t) += 1.0;
  }
  const double p = 1.0 / 25.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  CHECK((counts.array() - draws * p).abs().maxCoeff() <= 4.0 * sigma);
}

TEST_CASE("debug strings round trip") {
  CounterRng rng(4);
  const PatchConfig cfg(1, 32, 64, 4, 8, 64);
  const CsiWindow w = seeded_window(1, 32, 64, 2);
  for (auto s : {MaskStrategy::ChannelAware, MaskStrategy::Time, MaskStrategy::Subcarrier, MaskStrategy::Rect}) {
    MaskPolicy policy;
    policy.strategy = s;
    const MaskSpec m = sample_mask(w, cfg, policy, rng);
    const std::string line = to_debug_string(m);
    CHECK(parse_debug_string(line, 8, 8) == m);
  }
  CHECK(to_debug_string(make_mask(8, 8, 1, 2, {3, 4}, MaskStrategy::Time)) == "1 2 3 4 time");
  CHECK_THROWS_AS(parse_debug_string("1 2 x", 8, 8), Error);
}

TEST_CASE("channel-aware masks favour the high-variation region and are reproducible") {
  const PatchConfig cfg(1, 32, 64, 4, 8, 64);
  CsiWindow w(1, 32, 64);
  CounterRng noise(1);
  for (float& v : w.values()) v = static_cast<float>(0.01 * noise.normal());
  for (int k = 0; k < 12; ++k) {
    for (int t = 0; t < 24; ++t) w.at(0, k, t) += static_cast<float>((t % 2 == 0 ? 1.0 : -1.0));
  }
  MaskPolicy policy;
  int hits = 0;
  const int draws = 400;
  for (int i = 0; i < draws; ++i) {
    CounterRng rng = CounterRng(3).split(static_cast<std::uint64_t>(i));
    CounterRng again = rng;
    const MaskSpec m = sample_mask(w, cfg, policy, rng);
    CHECK(sample_mask(w, cfg, policy, again) == m);
    const bool overlaps = m.anchor_k < 3 && m.anchor_t < 3;
    hits += overlaps ? 1 : 0;
  }
  // uniform placement would overlap the corner far less than half the time
  CHECK(hits > draws / 2);
}
