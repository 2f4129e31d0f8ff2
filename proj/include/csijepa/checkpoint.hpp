#pragma once

#include "csijepa/net.hpp"

#include <filesystem>

namespace csijepa {

/// Writes `<stem>.bin` (raw little-endian f32 tensors back to back) and
/// `<stem>.manifest`, a text file with a header line, `meta key value` lines
/// and one `name RxC byte_offset` line per tensor.
void save_checkpoint(const ModelState<float>& state, const std::filesystem::path& stem);

/// Loads a checkpoint into the structure implied by `expected`. Fails on a
/// grid or patch geometry mismatch, on a missing tensor, or on a tensor whose
/// shape differs (the message names the tensor).
ModelState<float> load_checkpoint(const std::filesystem::path& stem, const ModelConfig& expected);

/// Reads only the model geometry recorded in a manifest.
ModelConfig checkpoint_config(const std::filesystem::path& stem);

}  // namespace csijepa
