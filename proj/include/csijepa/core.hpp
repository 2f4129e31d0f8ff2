#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csijepa {

/// All library failures surface as this exception with a one-line message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One C x K x T amplitude window, stored channel-major, then subcarrier,
/// then time: index (c * K + k) * T + t.
class CsiWindow {
 public:
  CsiWindow() = default;
  CsiWindow(int channels, int subcarriers, int time_steps);
  CsiWindow(int channels, int subcarriers, int time_steps, std::vector<float> values);

  [[nodiscard]] int channels() const noexcept { return channels_; }
  [[nodiscard]] int subcarriers() const noexcept { return subcarriers_; }
  [[nodiscard]] int time_steps() const noexcept { return time_steps_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

  [[nodiscard]] float at(int c, int k, int t) const noexcept {
    return values_[(static_cast<std::size_t>(c) * subcarriers_ + k) * time_steps_ + t];
  }
  float& at(int c, int k, int t) noexcept {
    return values_[(static_cast<std::size_t>(c) * subcarriers_ + k) * time_steps_ + t];
  }

  /// K x T view of one channel.
  [[nodiscard]] Eigen::Map<const RowMatrixXf> channel(int c) const;
  Eigen::Map<RowMatrixXf> channel(int c);

  [[nodiscard]] std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  /// Set by `standardize` when the raw window had (numerically) zero spread.
  [[nodiscard]] bool degenerate() const noexcept { return degenerate_; }
  void set_degenerate(bool flag) noexcept { degenerate_ = flag; }

  [[nodiscard]] bool same_shape(const CsiWindow& other) const noexcept {
    return channels_ == other.channels_ && subcarriers_ == other.subcarriers_ &&
           time_steps_ == other.time_steps_;
  }

 private:
  int channels_ = 0;
  int subcarriers_ = 0;
  int time_steps_ = 0;
  std::vector<float> values_;
  bool degenerate_ = false;
};

/// Patch geometry on the subcarrier-time plane plus the token width.
class PatchConfig {
 public:
  PatchConfig() = default;
  /// Throws unless K and T divide evenly and the grid holds at least two patches.
  PatchConfig(int channels, int subcarriers, int time_steps, int patch_k, int patch_t, int embed_dim);

  [[nodiscard]] int channels() const noexcept { return channels_; }
  [[nodiscard]] int subcarriers() const noexcept { return subcarriers_; }
  [[nodiscard]] int time_steps() const noexcept { return time_steps_; }
  [[nodiscard]] int patch_k() const noexcept { return patch_k_; }
  [[nodiscard]] int patch_t() const noexcept { return patch_t_; }
  [[nodiscard]] int grid_k() const noexcept { return subcarriers_ / patch_k_; }
  [[nodiscard]] int grid_t() const noexcept { return time_steps_ / patch_t_; }
  [[nodiscard]] int num_patches() const noexcept { return grid_k() * grid_t(); }
  [[nodiscard]] int patch_size() const noexcept { return channels_ * patch_k_ * patch_t_; }
  [[nodiscard]] int embed_dim() const noexcept { return embed_dim_; }

  /// Row-major token index of patch (i, j).
  [[nodiscard]] int token_index(int i, int j) const noexcept { return i * grid_t() + j; }

  void check_window(const CsiWindow& window) const;

 private:
  int channels_ = 1;
  int subcarriers_ = 0;
  int time_steps_ = 0;
  int patch_k_ = 1;
  int patch_t_ = 1;
  int embed_dim_ = 0;
};

struct LabeledSample {
  CsiWindow window;
  int label = 0;
  int task_id = 0;
};

/// Zero-mean, unit-variance (population convention) over all C*K*T entries.
/// Constant windows come back all-zero with the degenerate flag set.
CsiWindow standardize(const CsiWindow& raw);

// ---------------------------------------------------------------------------
// Corpus file

inline constexpr char kCorpusMagic[8] = {'C', 'S', 'I', 'J', 'E', 'P', 'A', '0'};
inline constexpr std::uint32_t kCorpusVersion = 1;

struct CorpusHeader {
  std::uint32_t version = kCorpusVersion;
  std::uint32_t num_samples = 0;
  std::uint32_t channels = 0;
  std::uint32_t subcarriers = 0;
  std::uint32_t time_steps = 0;
  std::uint32_t has_labels = 0;
  std::uint32_t num_classes = 0;

  void validate() const;
  [[nodiscard]] std::uint64_t payload_bytes() const;
};

struct Corpus {
  CorpusHeader header;
  std::vector<CsiWindow> windows;
  std::vector<int> labels;  ///< empty when unlabeled

  [[nodiscard]] bool labeled() const noexcept { return header.has_labels != 0; }
  [[nodiscard]] std::size_t size() const noexcept { return windows.size(); }
};

/// Layout: magic, 7 little-endian u32 header fields, then per sample an
/// optional u16 label followed by C*K*T little-endian f32 values.
void write_corpus(const std::filesystem::path& path, std::span<const CsiWindow> windows,
                  std::span<const int> labels = {}, int num_classes = 0);

Corpus read_corpus(const std::filesystem::path& path);

}  // namespace csijepa
