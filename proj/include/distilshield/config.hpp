#pragma once

// Flat key=value configuration files. Keys carry a section prefix
// ("attack.epsilon = 0.01"); '#' starts a comment. Every key read through a
// typed getter is marked as used so that typos can be reported.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace distilshield {

class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigFile load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_real(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_reals(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     std::vector<std::size_t> fallback) const;

  /// Keys present in the file but never read.
  std::vector<std::string> unused_keys() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::string origin_;
  mutable std::set<std::string> used_;
};

}  // namespace distilshield
