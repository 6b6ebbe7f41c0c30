#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mcdti/errors.hpp"

namespace mcdti {

// Flat `key = value` config: one pair per line, '#' starts a comment,
// insertion order is preserved so snapshots diff cleanly.
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig parse_text(const std::string& text, const std::string& origin = "<text>") {
    FlatConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": expected `key = value`, got: " + trimmed);
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (cfg.has(key))
        throw FormatError(origin + ":" + std::to_string(lineno) + ": duplicate key `" +
                          key + "`");
      cfg.set(key, value);
    }
    return cfg;
  }

  static FlatConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_text(os.str(), path);
  }

  bool has(const std::string& key) const { return index_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it == index_.end()) {
      index_[key] = entries_.size();
      entries_.push_back({key, value});
    } else {
      entries_[it->second].second = value;
    }
  }

  const std::string& get_string(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw UsageError("missing required config key `" + key + "`");
    return entries_[it->second].second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  long long get_int(const std::string& key) const {
    return to_int(key, get_string(key));
  }
  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  double get_double(const std::string& key) const {
    return to_double(key, get_string(key));
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key `" + key + "`: expected a boolean, got `" + v + "`");
  }
  bool get_bool(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  // Rejects keys outside the allowed set; unknown keys are usage errors.
  void require_known_keys(const std::vector<std::string>& allowed,
                          const std::string& context) const {
    for (const auto& [k, v] : entries_) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        throw UsageError(context + ": unknown config key `" + k + "`");
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
    return os.str();
  }

  void write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file: " + path);
    out << to_text();
    if (!out) throw IoError("failed writing config file: " + path);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static long long to_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &pos);
    } catch (const std::exception&) {
      throw UsageError("config key `" + key + "`: expected an integer, got `" + v + "`");
    }
    if (pos != v.size())
      throw UsageError("config key `" + key + "`: expected an integer, got `" + v + "`");
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      throw UsageError("config key `" + key + "`: expected a number, got `" + v + "`");
    }
    if (pos != v.size())
      throw UsageError("config key `" + key + "`: expected a number, got `" + v + "`");
    return out;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mcdti
