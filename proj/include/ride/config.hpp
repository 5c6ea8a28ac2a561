#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ride {

/// Plain-text "key = value" settings. Blank lines and lines starting with
/// '#' are ignored. Later duplicates override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

  [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const;
  [[nodiscard]] double get_double(const std::string& key, double fallback) const;
  [[nodiscard]] long long get_int(const std::string& key, long long fallback) const;
  [[nodiscard]] std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  /// Keys not in `known`.
  [[nodiscard]] std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ride
