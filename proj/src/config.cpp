#include "csijepa/config.hpp"

#include "csijepa/core.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace csijepa {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::pair<std::string, std::string> split_assignment(std::string_view line, std::string_view where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) {
    throw Error("config " + std::string(where) + ": expected key=value, got '" + std::string(line) + "'");
  }
  auto key = trim(line.substr(0, eq));
  auto value = trim(line.substr(eq + 1));
  if (key.empty()) throw Error("config " + std::string(where) + ": empty key");
  return {std::move(key), std::move(value)};
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path.string());
}

KeyValueConfig KeyValueConfig::from_string(std::string_view text, std::string_view origin) {
  KeyValueConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto [key, value] = split_assignment(body, std::string(origin) + ":" + std::to_string(lineno));
    if (cfg.values_.contains(key)) {
      throw Error("config " + std::string(origin) + ":" + std::to_string(lineno) + ": duplicate key '" +
                  key + "'");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

void KeyValueConfig::apply_overrides(const std::vector<std::string>& assignments) {
  std::map<std::string, std::string> seen;
  for (const auto& a : assignments) {
    auto [key, value] = split_assignment(a, "--set");
    if (auto it = seen.find(key); it != seen.end() && it->second != value) {
      throw Error("conflicting overrides for '" + key + "': '" + it->second + "' vs '" + value + "'");
    }
    seen[key] = value;
  }
  for (auto& [k, v] : seen) values_[k] = v;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' is not a number: '" + it->second + "'");
  }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error("config: '" + key + "' is not an integer: '" + s + "'");
  }
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw Error("config: '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<long long> KeyValueConfig::get_int_list(const std::string& key,
                                                    const std::vector<long long>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<long long> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw Error("config: '" + key + "' has a non-integer entry '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace csijepa
