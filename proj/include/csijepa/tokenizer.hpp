#pragma once

#include "csijepa/core.hpp"
#include "csijepa/layers.hpp"

#include <cmath>

namespace csijepa {

/// Patch tokens flattened row-major over the patch grid: row i * N_T + j
/// holds patch (i, j). Shape N x D.
template <typename S>
struct TokenGrid {
  Mat<S> tokens;
  PatchConfig config;
};

/// Fixed 2D sine-cosine table, N x D, same row order as TokenGrid.
template <typename S>
struct PositionalTable {
  Mat<S> table;
};

/// Gather every patch into one row: N x (C * P_K * P_T), each row ordered
/// channel, then subcarrier offset, then time offset.
template <typename S>
Mat<S> patchify(const CsiWindow& window, const PatchConfig& cfg) {
  cfg.check_window(window);
  const int pk = cfg.patch_k();
  const int pt = cfg.patch_t();
  Mat<S> rows(cfg.num_patches(), cfg.patch_size());
  for (int i = 0; i < cfg.grid_k(); ++i) {
    for (int j = 0; j < cfg.grid_t(); ++j) {
      const int n = cfg.token_index(i, j);
      int col = 0;
      for (int c = 0; c < cfg.channels(); ++c) {
        for (int dk = 0; dk < pk; ++dk) {
          for (int dt = 0; dt < pt; ++dt) rows(n, col++) = static_cast<S>(window.at(c, i * pk + dk, j * pt + dt));
        }
      }
    }
  }
  return rows;
}

/// Patch projection with a uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
template <typename S>
LinearParams<S> make_patch_projection(const PatchConfig& cfg, CounterRng& rng) {
  auto p = LinearParams<S>::zeros(cfg.patch_size(), cfg.embed_dim());
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.patch_size()));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return p;
}

/// Strided non-overlapping linear projection of every patch.
template <typename S>
TokenGrid<S> patch_embed(const CsiWindow& window, const LinearParams<S>& projection, const PatchConfig& cfg) {
  if (projection.out_dim() != cfg.embed_dim() || projection.in_dim() != cfg.patch_size()) {
    throw Error("patch_embed: projection is " + std::to_string(projection.out_dim()) + "x" +
                std::to_string(projection.in_dim()) + ", expected " + std::to_string(cfg.embed_dim()) + "x" +
                std::to_string(cfg.patch_size()));
  }
  return {linear(patchify<S>(window, cfg), projection), cfg};
}

template <typename S>
PositionalTable<S> sincos_positions(const PatchConfig& cfg) {
  const int dim = cfg.embed_dim();
  if (dim % 4 != 0) throw Error("sincos_positions: embed dim " + std::to_string(dim) + " not divisible by 4");
  const int half = dim / 2;
  Mat<S> table(cfg.num_patches(), dim);
  for (int i = 0; i < cfg.grid_k(); ++i) {
    for (int j = 0; j < cfg.grid_t(); ++j) {
      const int n = cfg.token_index(i, j);
      for (int d = 0; d < half / 2; ++d) {
        const double omega = std::pow(10000.0, 2.0 * d / half);
        table(n, 2 * d) = static_cast<S>(std::sin(i / omega));
        table(n, 2 * d + 1) = static_cast<S>(std::cos(i / omega));
        table(n, half + 2 * d) = static_cast<S>(std::sin(j / omega));
        table(n, half + 2 * d + 1) = static_cast<S>(std::cos(j / omega));
      }
    }
  }
  return {std::move(table)};
}

template <typename S>
TokenGrid<S> add_positions(const TokenGrid<S>& grid, const PositionalTable<S>& positions) {
  if (grid.tokens.rows() != positions.table.rows() || grid.tokens.cols() != positions.table.cols()) {
    throw Error("add_positions: token grid and positional table shapes differ");
  }
  return {grid.tokens + positions.table, grid.config};
}

/// Select rows by index.
template <typename S>
Mat<S> gather_rows(const Mat<S>& m, std::span<const int> rows) {
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

}  // namespace csijepa
