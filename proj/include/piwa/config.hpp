#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "piwa/core.hpp"

namespace piwa {

/// Flat typed key-value configuration. Grammar, one entry per line:
///
///   key = value          # trailing comments allowed
///
/// Keys are dotted identifiers ([A-Za-z0-9_.-]); values are scalars or
/// comma-separated lists; '#' starts a comment; blank lines are ignored.
/// There are no sections, includes, or continuations.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text) {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = text.find('\n', pos);
      std::string_view line = text.substr(
          pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
      pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) {
        line = line.substr(0, hash);
      }
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected 'key = value'");
      }
      const std::string key{trim(line.substr(0, eq))};
      const std::string value{trim(line.substr(eq + 1))};
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      }
      for (char c : key) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ||
              c == '-')) {
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": bad character in key '" + key + "'");
        }
      }
      if (cfg.entries_.count(key)) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": duplicate key '" + key + "'");
      }
      cfg.entries_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  double get_real(const std::string& key) const { return to_real(key, get_string(key)); }

  double get_real(const std::string& key, double fallback) const {
    return has(key) ? get_real(key) : fallback;
  }

  std::int64_t get_int(const std::string& key) const {
    return to_int(key, get_string(key));
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
  }

  std::vector<double> get_real_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& tok : split_list(get_string(key))) {
      out.push_back(to_real(key, tok));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' expects a list");
    return out;
  }

  std::vector<std::int64_t> get_int_list(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const std::string& tok : split_list(get_string(key))) {
      out.push_back(to_int(key, tok));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' expects a list");
    return out;
  }

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

  /// Canonical form: "key = value" lines sorted by key. The fingerprint is
  /// FNV-1a over this text, so it is stable across reordering and comments.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += k;
      out += " = ";
      out += v;
      out += '\n';
    }
    return out;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
      s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
      s.remove_suffix(1);
    }
    return s;
  }

  static std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
      const std::size_t comma = v.find(',', pos);
      const std::string_view tok =
          trim(v.substr(pos, comma == std::string_view::npos ? v.size() - pos
                                                             : comma - pos));
      if (!tok.empty()) out.emplace_back(tok);
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    return out;
  }

  static double to_real(const std::string& key, std::string_view v) {
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "' expects a real, got '" +
                        std::string(v) + "'");
    }
    return out;
  }

  static std::int64_t to_int(const std::string& key, std::string_view v) {
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    std::int64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "' expects an integer, got '" +
                        std::string(v) + "'");
    }
    return out;
  }

  std::map<std::string, std::string> entries_;
};

}  // namespace piwa
