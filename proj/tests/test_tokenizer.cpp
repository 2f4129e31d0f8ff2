#include "csijepa/tokenizer.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace csijepa;

namespace {

CsiWindow seeded_window(int c, int k, int t, std::uint64_t seed) {
  CsiWindow w(c, k, t);
  CounterRng rng(seed);
  for (float& v : w.values()) v = static_cast<float>(rng.normal());
  return w;
}

}  // namespace

TEST_CASE("patchify orders each patch by channel, subcarrier, time") {
  const PatchConfig cfg(2, 4, 4, 2, 2, 4);
  CsiWindow w(2, 4, 4);
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < 4; ++k) {
      for (int t = 0; t < 4; ++t) w.at(c, k, t) = static_cast<float>(100 * c + 10 * k + t);
    }
  }
  const Mat<float> p = patchify<float>(w, cfg);
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 8);
  // patch (1, 0): k in [2, 4), t in [0, 2)
  const float expected[] = {20, 21, 30, 31, 120, 121, 130, 131};
  for (int i = 0; i < 8; ++i) CHECK(p(2, i) == expected[i]);
}

TEST_CASE("patch embedding matches a loop oracle on a seeded 1x8x8 window") {
  const PatchConfig cfg(1, 8, 8, 4, 4, 8);
  const CsiWindow w = seeded_window(1, 8, 8, 5);
  CounterRng rng(9);
  auto proj = make_patch_projection<float>(cfg, rng);
  for (Eigen::Index i = 0; i < proj.bias.size(); ++i) proj.bias(i) = static_cast<float>(0.1 * rng.normal());
  const auto tokens = patch_embed(w, proj, cfg).tokens;

  std::vector<double> bias(proj.bias.data(), proj.bias.data() + proj.bias.size());
  const auto expected = oracle::patch_tokens(w, cfg, oracle::to_grid(proj.weight), bias);
  CHECK(oracle::max_abs_diff(tokens, expected) <= 1e-6);
}

TEST_CASE("patch embedding rejects a projection of the wrong size") {
  const PatchConfig cfg(1, 8, 8, 4, 4, 8);
  auto proj = LinearParams<float>::zeros(15, 8);
  CHECK_THROWS_AS(patch_embed(seeded_window(1, 8, 8, 1), proj, cfg), Error);
  CHECK_THROWS_AS(patch_embed(seeded_window(1, 8, 4, 1), LinearParams<float>::zeros(16, 8), cfg), Error);
}

TEST_CASE("sine-cosine positions: closed-form entries") {
  const PatchConfig cfg(1, 4, 4, 2, 2, 8);  // 2 x 2 grid, D = 8
  const auto pos = sincos_positions<double>(cfg).table;
  const int n = cfg.token_index(1, 0);
  CHECK(pos(n, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(pos(n, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pos(n, 1) == doctest::Approx(std::cos(1.0)));
  // time half at j = 0 is sin(0), cos(0)
  CHECK(pos(n, 4) == 0.0);
  CHECK(pos(n, 5) == 1.0);
  // second frequency: omega = 10000^(2/4) = 100
  CHECK(pos(n, 2) == doctest::Approx(std::sin(0.01)));
  CHECK_THROWS_AS(sincos_positions<double>(PatchConfig(1, 4, 4, 2, 2, 6)), Error);
}

TEST_CASE("positions are distinct per token and bounded") {
  const PatchConfig cfg(1, 32, 64, 4, 8, 64);
  const auto pos = sincos_positions<double>(cfg).table;
  CHECK(pos.cwiseAbs().maxCoeff() <= 1.0);
  for (int a = 0; a < pos.rows(); ++a) {
    for (int b = a + 1; b < pos.rows(); ++b) CHECK((pos.row(a) - pos.row(b)).norm() > 1e-3);
  }
}

TEST_CASE("add_positions and gather_rows") {
  const PatchConfig cfg(1, 4, 4, 2, 2, 4);
  TokenGrid<double> grid{Mat<double>::Ones(4, 4), cfg};
  PositionalTable<double> pos{Mat<double>::Constant(4, 4, 2.0)};
  CHECK(add_positions(grid, pos).tokens.isApproxToConstant(3.0));
  CHECK_THROWS_AS(add_positions(grid, PositionalTable<double>{Mat<double>::Zero(3, 4)}), Error);

  Mat<double> m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  const std::vector<int> rows = {2, 0};
  const Mat<double> g = gather_rows(m, rows);
  CHECK(g(0, 0) == 5);
  CHECK(g(1, 1) == 2);
}
