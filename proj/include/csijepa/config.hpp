#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace csijepa {

/// Flat `key = value` configuration. Lines starting with '#' are comments.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::filesystem::path& path);
  static KeyValueConfig from_string(std::string_view text, std::string_view origin = "<string>");

  /// Apply `key=value` overrides. The same key given twice with different
  /// values is rejected as a conflict.
  void apply_overrides(const std::vector<std::string>& assignments);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] bool contains(const std::string& key) const { return values_.contains(key); }

  [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const;
  [[nodiscard]] double get_double(const std::string& key, double fallback) const;
  [[nodiscard]] long long get_int(const std::string& key, long long fallback) const;
  [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const;
  [[nodiscard]] std::vector<long long> get_int_list(const std::string& key,
                                                    const std::vector<long long>& fallback) const;

  [[nodiscard]] const std::map<std::string, std::string>& entries() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace csijepa
