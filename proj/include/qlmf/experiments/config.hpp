#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qlmf/core/errors.hpp"

namespace qlmf {

inline constexpr const char* kConfigSchema = "qlmf-config-v1";

// Line-oriented `key = value` file. `#` starts a comment. The key `schema`
// must equal kConfigSchema. Lists are comma separated; (p, n) pairs are
// written `2x50`.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>") {
    KeyValueConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (c.values_.count(key)) throw ConfigError(origin + ": duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    auto it = c.values_.find("schema");
    if (it == c.values_.end() || it->second != kConfigSchema)
      throw ConfigError(origin + ": missing or unsupported schema (expected " + std::string(kConfigSchema) + ")");
    return c;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  // A config holding only the schema key.
  static KeyValueConfig empty() { return parse(std::string("schema = ") + kConfigSchema); }

  // Sets or replaces a value, e.g. from a command-line flag.
  void set(const std::string& key, const std::string& value) { values_[key] = trim(value); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::optional<double> real(const std::string& key) const {
    auto s = str(key);
    if (!s) return std::nullopt;
    return to_real(key, *s);
  }

  std::optional<std::int64_t> integer(const std::string& key) const {
    auto s = str(key);
    if (!s) return std::nullopt;
    std::int64_t v{};
    auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
    if (ec != std::errc() || ptr != s->data() + s->size()) throw ConfigError("'" + key + "' is not an integer");
    return v;
  }

  std::optional<std::uint64_t> unsigned64(const std::string& key) const {
    auto s = str(key);
    if (!s) return std::nullopt;
    std::uint64_t v{};
    auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
    if (ec != std::errc() || ptr != s->data() + s->size()) throw ConfigError("'" + key + "' is not an unsigned integer");
    return v;
  }

  std::optional<std::vector<double>> reals(const std::string& key) const {
    auto s = str(key);
    if (!s) return std::nullopt;
    std::vector<double> out;
    for (const auto& item : split(*s)) out.push_back(to_real(key, item));
    return out;
  }

  std::optional<std::vector<int>> integers(const std::string& key) const {
    auto v = reals(key);
    if (!v) return std::nullopt;
    std::vector<int> out;
    for (double d : *v) {
      if (d != double(int(d))) throw ConfigError("'" + key + "' must hold integers");
      out.push_back(int(d));
    }
    return out;
  }

  std::optional<std::vector<std::pair<int, int>>> pairs(const std::string& key) const {
    auto s = str(key);
    if (!s) return std::nullopt;
    std::vector<std::pair<int, int>> out;
    for (const auto& item : split(*s)) {
      auto x = item.find('x');
      if (x == std::string::npos) throw ConfigError("'" + key + "': expected entries like 2x50");
      out.emplace_back(int(to_real(key, item.substr(0, x))), int(to_real(key, item.substr(x + 1))));
    }
    return out;
  }

  // Keys present in the file but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (k != "schema" && !used_.count(k)) out.push_back(k);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static double to_real(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw ConfigError("");
      return v;
    } catch (...) {
      throw ConfigError("'" + key + "': cannot parse number '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace qlmf
