#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "recdf/csv.hpp"
#include "recdf/errors.hpp"

namespace recdf {

// Flat "key = value" config files. Lines starting with '#' are comments.
// Unknown keys are rejected, listing the offending key, so a typo cannot
// silently fall back to a default. Lists are comma separated.

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in) {
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string_view sv = line;
      auto body_end = sv.find('#');
      if (body_end != std::string_view::npos) sv = sv.substr(0, body_end);
      sv = trim(sv);
      if (sv.empty()) continue;
      auto eq = sv.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(lineno) +
                          ": expected 'key = value'");
      }
      std::string key(trim(sv.substr(0, eq)));
      std::string value(trim(sv.substr(eq + 1)));
      if (key.empty()) {
        throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      }
      if (cfg.values_.count(key)) {
        throw ConfigError("duplicate key '" + key + "'");
      }
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse(in);
  }

  static KeyValueConfig parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, std::string value) {
    values_[key] = std::move(value);
  }

  std::string get_string(const std::string& key) const {
    mark(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    mark(key);
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_real(const std::string& key) const { return to_real(key, get_string(key)); }
  double get_real(const std::string& key, double dflt) const {
    mark(key);
    auto it = values_.find(key);
    return it == values_.end() ? dflt : to_real(key, it->second);
  }

  std::int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    mark(key);
    auto it = values_.find(key);
    return it == values_.end() ? dflt : to_int(key, it->second);
  }

  bool get_bool(const std::string& key, bool dflt) const {
    mark(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError("key '" + key + "': expected true or false");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    return split_list(get_string(key));
  }
  std::vector<std::string> get_list(const std::string& key,
                                    const std::string& dflt) const {
    return split_list(get_string(key, dflt));
  }

  std::vector<double> get_real_list(const std::string& key,
                                    const std::string& dflt) const {
    std::vector<double> out;
    for (const auto& s : get_list(key, dflt)) out.push_back(to_real(key, s));
    return out;
  }

  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         const std::string& dflt) const {
    std::vector<std::int64_t> out;
    for (const auto& s : get_list(key, dflt)) out.push_back(to_int(key, s));
    return out;
  }

  // Call after all schema keys were read; anything left is a typo.
  void reject_unknown_keys() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : values_) {
      if (!touched_.count(k)) unknown.push_back(k);
    }
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw ConfigError(msg);
    }
  }

  // Canonical serialization; also the input to the config hash embedded in
  // every report, so identical effective configs hash identically.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

  std::string hash_hex() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : canonical()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    char buf[17];
    static const char* hex = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
      buf[i] = hex[h & 0xf];
      h >>= 4;
    }
    buf[16] = '\0';
    return std::string(buf);
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      std::string t(trim(cur));
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  static double to_real(const std::string& key, const std::string& s) {
    try {
      return parse_double(s);
    } catch (const ValidationError&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    }
  }

  static std::int64_t to_int(const std::string& key, const std::string& s) {
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
    }
    return v;
  }

  void mark(const std::string& key) const { touched_.insert(key); }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

}  // namespace recdf
