#include "distilshield/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "distilshield/checkpoint.hpp"
#include "distilshield/errors.hpp"

namespace distilshield {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& text) {
  Int value{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a nonnegative integer");
  }
  return value;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
    if (cfg.values_.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

void ConfigFile::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool ConfigFile::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string* ConfigFile::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double ConfigFile::get_real(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    return parse_real(*v);
  } catch (const FormatError&) {
    throw ConfigError("config key '" + key + "': '" + *v + "' is not a number");
  }
}

std::size_t ConfigFile::get_size(const std::string& key, std::size_t fallback) const {
  const std::string* v = find(key);
  return v ? parse_integer<std::size_t>(key, *v) : fallback;
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(key);
  return v ? parse_integer<std::uint64_t>(key, *v) : fallback;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + *v + "' is not a boolean");
}

std::vector<double> ConfigFile::get_reals(const std::string& key,
                                          std::vector<double> fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const std::string& item : split_list(*v)) {
    try {
      out.push_back(parse_real(item));
    } catch (const FormatError&) {
      throw ConfigError("config key '" + key + "': '" + item + "' is not a number");
    }
  }
  return out;
}

std::vector<std::size_t> ConfigFile::get_sizes(const std::string& key,
                                               std::vector<std::size_t> fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(*v)) out.push_back(parse_integer<std::size_t>(key, item));
  return out;
}

std::vector<std::string> ConfigFile::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) out.push_back(key);
  }
  return out;
}

}  // namespace distilshield
