#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mlsm {

/// Raised on malformed config input or invalid values; the CLI maps it to
/// exit code 1 (usage/config error) as opposed to runtime failures (2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat dotted-key configuration: `section.key = value` lines, '#' comments.
/// Later assignments win, so file values can be overridden by CLI flags.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string val = strip(s.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = val;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& def = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  std::string require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty())
      throw ConfigError("missing required config key: " + key);
    return it->second;
  }

  long get_int(const std::string& key, long def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not an integer: " + it->second);
    }
  }

  double get_double(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not a number: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key " + key + " is not a boolean: " + v);
  }

  /// Parse a "k=v" override as produced by `--set`.
  void apply_override(const std::string& spec) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override must be key=value, got: " + spec);
    set(strip(spec.substr(0, eq)), strip(spec.substr(eq + 1)));
  }

  /// Canonical sorted rendering; written next to every run's outputs.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << serialize();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mlsm
