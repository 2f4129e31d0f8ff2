#include "csijepa/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace csijepa {

namespace {

constexpr std::string_view kManifestHeader = "csijepa-checkpoint 1";

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

/// Calls f(name, tensor) for every stored tensor in a fixed order.
template <typename State, typename F>
void for_each_tensor(State& s, F&& f) {
  auto fwd = [&](const std::string& name, bool, auto& t) { f(name, t); };
  visit("online", fwd, s.online);
  visit("target", fwd, s.target);
  visit("predictor", fwd, s.predictor);
  visit("adam.m.online", fwd, s.online_m);
  visit("adam.v.online", fwd, s.online_v);
  visit("adam.m.predictor", fwd, s.predictor_m);
  visit("adam.v.predictor", fwd, s.predictor_v);
}

struct TensorEntry {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::uint64_t offset = 0;
};

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

std::map<std::string, long long> geometry(const ModelConfig& c) {
  return {{"channels", c.patch.channels()},       {"subcarriers", c.patch.subcarriers()},
          {"time_steps", c.patch.time_steps()},   {"patch_k", c.patch.patch_k()},
          {"patch_t", c.patch.patch_t()},         {"grid_k", c.patch.grid_k()},
          {"grid_t", c.patch.grid_t()},           {"embed_dim", c.embed_dim()},
          {"encoder_depth", c.encoder_depth},     {"encoder_heads", c.encoder_heads},
          {"predictor_dim", c.predictor_dim},     {"predictor_depth", c.predictor_depth},
          {"predictor_heads", c.predictor_heads}, {"mlp_ratio", c.mlp_ratio}};
}

struct Manifest {
  std::map<std::string, long long> meta;
  std::map<std::string, TensorEntry> tensors;
};

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw Error("load_checkpoint: " + path.string() + " is not a checkpoint manifest");
  }
  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string first;
    row >> first;
    if (first == "meta") {
      std::string key;
      long long value = 0;
      if (!(row >> key >> value)) throw Error("load_checkpoint: malformed meta line " + std::to_string(lineno));
      m.meta[key] = value;
      continue;
    }
    std::string shape;
    TensorEntry e;
    if (!(row >> shape >> e.offset)) throw Error("load_checkpoint: malformed tensor line " + std::to_string(lineno));
    const auto x = shape.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(shape);
      e.rows = std::stoll(shape.substr(0, x));
      e.cols = std::stoll(shape.substr(x + 1));
    } catch (const std::exception&) {
      throw Error("load_checkpoint: bad shape '" + shape + "' for tensor " + first);
    }
    m.tensors[first] = e;
  }
  return m;
}

ModelConfig config_from_meta(const std::map<std::string, long long>& meta) {
  auto need = [&](const char* key) -> int {
    auto it = meta.find(key);
    if (it == meta.end()) throw Error(std::string("load_checkpoint: manifest lacks meta ") + key);
    return static_cast<int>(it->second);
  };
  ModelConfig c;
  c.patch = PatchConfig(need("channels"), need("subcarriers"), need("time_steps"), need("patch_k"), need("patch_t"),
                        need("embed_dim"));
  c.encoder_depth = need("encoder_depth");
  c.encoder_heads = need("encoder_heads");
  c.predictor_dim = need("predictor_dim");
  c.predictor_depth = need("predictor_depth");
  c.predictor_heads = need("predictor_heads");
  c.mlp_ratio = need("mlp_ratio");
  return c;
}

}  // namespace

void save_checkpoint(const ModelState<float>& state, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (const auto& [k, v] : geometry(state.config)) manifest << "meta " << k << ' ' << v << '\n';
  manifest << "meta step " << state.step << '\n';
  manifest << "meta epoch " << state.epoch << '\n';

  std::string blob;
  for_each_tensor(const_cast<ModelState<float>&>(state), [&](const std::string& name, auto& t) {
    manifest << name << ' ' << shape_string(t.rows(), t.cols()) << ' ' << blob.size() << '\n';
    blob.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  });

  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("save_checkpoint: cannot open " + with_suffix(stem, ".bin").string());
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream man(with_suffix(stem, ".manifest"), std::ios::trunc);
  if (!man) throw Error("save_checkpoint: cannot open " + with_suffix(stem, ".manifest").string());
  man << manifest.str();
  if (!bin || !man) throw Error("save_checkpoint: write failed for " + stem.string());
}

ModelConfig checkpoint_config(const std::filesystem::path& stem) {
  return config_from_meta(read_manifest(with_suffix(stem, ".manifest")).meta);
}

ModelState<float> load_checkpoint(const std::filesystem::path& stem, const ModelConfig& expected) {
  const Manifest m = read_manifest(with_suffix(stem, ".manifest"));
  for (const auto& [key, want] : geometry(expected)) {
    auto it = m.meta.find(key);
    if (it == m.meta.end()) throw Error("load_checkpoint: manifest lacks meta " + key);
    if (it->second != want) {
      throw Error("load_checkpoint: dimension mismatch for " + key + " (checkpoint " + std::to_string(it->second) +
                  ", expected " + std::to_string(want) + ")");
    }
  }

  std::ifstream in(with_suffix(stem, ".bin"), std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + with_suffix(stem, ".bin").string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  ModelState<float> state = init_model<float>(expected, 0);
  for_each_tensor(state, [&](const std::string& name, auto& t) {
    auto it = m.tensors.find(name);
    if (it == m.tensors.end()) throw Error("load_checkpoint: missing tensor " + name);
    const TensorEntry& e = it->second;
    if (e.rows != t.rows() || e.cols != t.cols()) {
      throw Error("load_checkpoint: tensor " + name + " has shape " + shape_string(e.rows, e.cols) + ", expected " +
                  shape_string(t.rows(), t.cols()));
    }
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    if (e.offset + bytes > blob.size()) throw Error("load_checkpoint: tensor " + name + " runs past end of blob");
    std::memcpy(t.data(), blob.data() + e.offset, bytes);
  });
  state.step = m.meta.contains("step") ? m.meta.at("step") : 0;
  state.epoch = m.meta.contains("epoch") ? static_cast<int>(m.meta.at("epoch")) : 0;
  return state;
}

}  // namespace csijepa
