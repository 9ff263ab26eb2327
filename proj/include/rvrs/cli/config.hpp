#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../error.hpp"

namespace rvrs::cli {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace detail

/// Flat `key = value` configuration. '#' starts a comment; lists are comma separated.
/// Every lookup records the value it resolved to, so the effective configuration
/// (explicit values and defaults) can be echoed into the run summary.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, const std::string& source = "<config>") {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = source + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
      if (!cfg.values_.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    }
    return cfg;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  /// Rejects any key outside `allowed`.
  void restrict_to(const std::set<std::string>& allowed, const std::string& experiment) const {
    for (const auto& [key, value] : values_) {
      if (allowed.count(key) == 0) {
        std::string list;
        for (const auto& k : allowed) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("unknown key '" + key + "' for experiment '" + experiment + "' (allowed: " + list + ")");
      }
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const std::string v = raw(key, fallback);
    used_[key] = v;
    return v;
  }

  long long get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    const long long v = it == values_.end() ? fallback : to_int(key, it->second);
    used_[key] = std::to_string(v);
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    const double v = it == values_.end() ? fallback : to_double(key, it->second);
    used_[key] = it == values_.end() ? format(v) : it->second;
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    bool v = fallback;
    if (it != values_.end()) {
      const std::string& s = it->second;
      if (s == "true" || s == "1" || s == "yes") {
        v = true;
      } else if (s == "false" || s == "0" || s == "no") {
        v = false;
      } else {
        throw ConfigError("key '" + key + "': expected a boolean, got '" + s + "'");
      }
    }
    used_[key] = v ? "true" : "false";
    return v;
  }

  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = values_.find(key);
    std::vector<double> v = fallback;
    if (it != values_.end()) {
      v.clear();
      for (const auto& item : detail::split_list(it->second)) v.push_back(to_double(key, item));
    }
    std::string echo;
    for (const double x : v) echo += (echo.empty() ? "" : ",") + format(x);
    used_[key] = it == values_.end() ? echo : it->second;
    return v;
  }

  std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const {
    const auto it = values_.find(key);
    std::vector<long long> v = fallback;
    if (it != values_.end()) {
      v.clear();
      for (const auto& item : detail::split_list(it->second)) v.push_back(to_int(key, item));
    }
    std::string echo;
    for (const long long x : v) echo += (echo.empty() ? "" : ",") + std::to_string(x);
    used_[key] = echo;
    return v;
  }

  // Effective values of every key looked up so far.
  const std::map<std::string, std::string>& resolved() const { return used_; }
  const std::map<std::string, std::string>& explicit_values() const { return values_; }

 private:
  std::string raw(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  static long long to_int(const std::string& key, const std::string& s) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && ptr == s.data() + s.size()) return v;
    // Accept integral values written in floating notation, e.g. 5e5.
    const double d = to_double(key, s);
    if (d == static_cast<double>(static_cast<long long>(d))) return static_cast<long long>(d);
    throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    }
    return v;
  }

  static std::string format(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> used_;
};

}  // namespace rvrs::cli
