#pragma once

// Flat key = value configuration with dotted section keys, e.g.
//
//   env = cartpole
//   actor.alpha1 = 1e-2
//   actor.widths = 64, 32
//
// Lines starting with '#' are comments.

#include "mapprop/network.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace mapprop {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& raw(const std::string& key) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key " + key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, raw(key)) : fallback;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? to_int(key, raw(key)) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key " + key + ": expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split(raw(key))) out.push_back(to_double(key, item));
    return out;
  }

  std::vector<std::int64_t> get_ints(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& item : split(raw(key))) out.push_back(to_int(key, item));
    return out;
  }

  /// Keys never read; a typo in a config file should not pass silently.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  /// "0..9" or "1,2,5" (also mixed: "0..2,7").
  static std::vector<std::uint64_t> parse_range_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split(text)) {
      const auto dots = item.find("..");
      if (dots == std::string::npos) {
        out.push_back(static_cast<std::uint64_t>(to_int("seeds", item)));
        continue;
      }
      const auto lo = to_int("seeds", item.substr(0, dots));
      const auto hi = to_int("seeds", item.substr(dots + 2));
      if (hi < lo || lo < 0) throw ConfigError("bad range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(static_cast<std::uint64_t>(s));
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected a number, got '" + v + "'");
    }
  }

  static std::int64_t to_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      throw ConfigError("key " + key + ": expected an integer, got '" + v + "'");
    return out;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace mapprop
