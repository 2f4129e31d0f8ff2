#include "csijepa/core.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace csijepa {

static_assert(std::endian::native == std::endian::little,
              "corpus and checkpoint I/O assume a little-endian host");

CsiWindow::CsiWindow(int channels, int subcarriers, int time_steps)
    : CsiWindow(channels, subcarriers, time_steps,
                std::vector<float>(static_cast<std::size_t>(std::max(channels, 0)) *
                                   std::max(subcarriers, 0) * std::max(time_steps, 0))) {}

CsiWindow::CsiWindow(int channels, int subcarriers, int time_steps, std::vector<float> values)
    : channels_(channels), subcarriers_(subcarriers), time_steps_(time_steps), values_(std::move(values)) {
  if (channels <= 0 || subcarriers <= 0 || time_steps <= 0) {
    throw Error("CsiWindow: dimensions must be positive");
  }
  if (values_.size() != static_cast<std::size_t>(channels) * subcarriers * time_steps) {
    throw Error("CsiWindow: value count does not match C*K*T");
  }
}

Eigen::Map<const RowMatrixXf> CsiWindow::channel(int c) const {
  return {values_.data() + static_cast<std::size_t>(c) * subcarriers_ * time_steps_, subcarriers_,
          time_steps_};
}

Eigen::Map<RowMatrixXf> CsiWindow::channel(int c) {
  return {values_.data() + static_cast<std::size_t>(c) * subcarriers_ * time_steps_, subcarriers_,
          time_steps_};
}

PatchConfig::PatchConfig(int channels, int subcarriers, int time_steps, int patch_k, int patch_t,
                         int embed_dim)
    : channels_(channels),
      subcarriers_(subcarriers),
      time_steps_(time_steps),
      patch_k_(patch_k),
      patch_t_(patch_t),
      embed_dim_(embed_dim) {
  if (channels <= 0 || subcarriers <= 0 || time_steps <= 0 || patch_k <= 0 || patch_t <= 0 ||
      embed_dim <= 0) {
    throw Error("PatchConfig: all sizes must be positive");
  }
  if (subcarriers % patch_k != 0 || time_steps % patch_t != 0) {
    throw Error("PatchConfig: window " + std::to_string(subcarriers) + "x" + std::to_string(time_steps) +
                " is not divisible by patch " + std::to_string(patch_k) + "x" + std::to_string(patch_t));
  }
  if (num_patches() < 2) throw Error("PatchConfig: patch grid must contain at least 2 patches");
}

void PatchConfig::check_window(const CsiWindow& window) const {
  if (window.channels() != channels_ || window.subcarriers() != subcarriers_ ||
      window.time_steps() != time_steps_) {
    throw Error("window shape " + std::to_string(window.channels()) + "x" +
                std::to_string(window.subcarriers()) + "x" + std::to_string(window.time_steps()) +
                " does not match patch config " + std::to_string(channels_) + "x" +
                std::to_string(subcarriers_) + "x" + std::to_string(time_steps_));
  }
}

CsiWindow standardize(const CsiWindow& raw) {
  const auto values = raw.values();
  double sum = 0.0;
  for (float v : values) {
    if (!std::isfinite(v)) throw Error("standardize: non-finite input value");
    sum += v;
  }
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  double sq = 0.0;
  for (float v : values) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / n);

  CsiWindow out(raw.channels(), raw.subcarriers(), raw.time_steps());
  if (stddev < 1e-12) {
    out.set_degenerate(true);
    return out;
  }
  auto dst = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    dst[i] = static_cast<float>((values[i] - mean) / stddev);
  }
  return out;
}

// ---------------------------------------------------------------------------

void CorpusHeader::validate() const {
  if (version != kCorpusVersion) throw Error("corpus: unsupported version " + std::to_string(version));
  if (channels == 0 || subcarriers == 0 || time_steps == 0) throw Error("corpus: zero window dimension");
  if (has_labels > 1) throw Error("corpus: has_labels must be 0 or 1");
  if (has_labels == 1 && num_classes == 0) throw Error("corpus: labeled corpus declares 0 classes");
  if (has_labels == 0 && num_classes != 0) throw Error("corpus: unlabeled corpus declares classes");
  if (num_classes > 65535) throw Error("corpus: num_classes exceeds u16 label range");
}

std::uint64_t CorpusHeader::payload_bytes() const {
  const std::uint64_t per_sample =
      (has_labels ? 2u : 0u) + std::uint64_t{4} * channels * subcarriers * time_steps;
  return per_sample * num_samples;
}

namespace {

constexpr std::size_t kHeaderBytes = sizeof(kCorpusMagic) + 7 * sizeof(std::uint32_t);

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const CsiWindow> windows,
                  std::span<const int> labels, int num_classes) {
  if (windows.empty()) throw Error("write_corpus: no samples");
  const bool labeled = !labels.empty();
  if (labeled && labels.size() != windows.size()) throw Error("write_corpus: label count mismatch");

  CorpusHeader h;
  h.num_samples = static_cast<std::uint32_t>(windows.size());
  h.channels = static_cast<std::uint32_t>(windows.front().channels());
  h.subcarriers = static_cast<std::uint32_t>(windows.front().subcarriers());
  h.time_steps = static_cast<std::uint32_t>(windows.front().time_steps());
  h.has_labels = labeled ? 1 : 0;
  h.num_classes = labeled ? static_cast<std::uint32_t>(num_classes) : 0;
  h.validate();

  std::string buf;
  buf.reserve(kHeaderBytes + h.payload_bytes());
  buf.append(kCorpusMagic, sizeof(kCorpusMagic));
  for (std::uint32_t field : {h.version, h.num_samples, h.channels, h.subcarriers, h.time_steps,
                              h.has_labels, h.num_classes}) {
    put(buf, field);
  }
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].same_shape(windows.front())) throw Error("write_corpus: mixed window shapes");
    if (labeled) {
      if (labels[i] < 0 || labels[i] >= num_classes) {
        throw Error("write_corpus: label " + std::to_string(labels[i]) + " out of range at sample " +
                    std::to_string(i));
      }
      put(buf, static_cast<std::uint16_t>(labels[i]));
    }
    const auto v = windows[i].values();
    buf.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("write_corpus: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("write_corpus: write failed for " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_corpus: cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < kHeaderBytes) throw Error("read_corpus: truncated header in " + path.string());
  if (std::memcmp(buf.data(), kCorpusMagic, sizeof(kCorpusMagic)) != 0) {
    throw Error("read_corpus: bad magic in " + path.string());
  }
  const char* p = buf.data() + sizeof(kCorpusMagic);
  Corpus corpus;
  CorpusHeader& h = corpus.header;
  std::uint32_t* fields[] = {&h.version, &h.num_samples, &h.channels, &h.subcarriers,
                             &h.time_steps, &h.has_labels, &h.num_classes};
  for (auto* f : fields) {
    *f = get<std::uint32_t>(p);
    p += sizeof(std::uint32_t);
  }
  h.validate();

  const std::uint64_t expected = kHeaderBytes + h.payload_bytes();
  if (buf.size() < expected) {
    throw Error("read_corpus: truncated payload (" + std::to_string(buf.size()) + " of " +
                std::to_string(expected) + " bytes)");
  }
  if (buf.size() > expected) throw Error("read_corpus: trailing bytes after declared payload");

  const std::size_t count = static_cast<std::size_t>(h.channels) * h.subcarriers * h.time_steps;
  corpus.windows.reserve(h.num_samples);
  if (h.has_labels) corpus.labels.reserve(h.num_samples);
  for (std::uint32_t s = 0; s < h.num_samples; ++s) {
    if (h.has_labels) {
      const auto label = get<std::uint16_t>(p);
      p += sizeof(std::uint16_t);
      if (label >= h.num_classes) {
        throw Error("read_corpus: label " + std::to_string(label) + " out of range at sample " +
                    std::to_string(s));
      }
      corpus.labels.push_back(label);
    }
    std::vector<float> values(count);
    std::memcpy(values.data(), p, count * sizeof(float));
    p += count * sizeof(float);
    for (float v : values) {
      if (!std::isfinite(v)) throw Error("read_corpus: non-finite value in sample " + std::to_string(s));
    }
    corpus.windows.emplace_back(static_cast<int>(h.channels), static_cast<int>(h.subcarriers),
                                static_cast<int>(h.time_steps), std::move(values));
  }
  return corpus;
}

}  // namespace csijepa
