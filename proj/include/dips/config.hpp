#ifndef DIPS_CONFIG_HPP
#define DIPS_CONFIG_HPP

#include <fstream>
#include <map>
#include <sstream>

#include "dips/core.hpp"

namespace dips {

// Flat key=value config with dotted section prefixes, e.g. `harvest.top_p = 3`.
// '#' starts a comment. CLI overrides call set() after from_file().
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    KeyValueConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string stripped = strip_comment(line);
      if (stripped.empty()) continue;
      size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(line_no));
      std::string key = trim(stripped.substr(0, eq));
      std::string value = trim(stripped.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config: empty key at " + path + ":" + std::to_string(line_no));
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  // accepts "key=value"
  void set_pair(const std::string& pair) {
    size_t eq = pair.find('=');
    if (eq == std::string::npos) throw ConfigError("config override needs key=value: " + pair);
    set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config: missing required key " + key);
    return it->second;
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse<int>(key, it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse<double>(key, it->second);
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse<uint64_t>(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: key " + key + " is not a bool: " + it->second);
  }

  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
  }

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  template <typename T>
  static T parse(const std::string& key, const std::string& value) {
    std::istringstream ss(value);
    T out{};
    ss >> out;
    if (ss.fail() || !ss.eof())
      throw ConfigError("config: cannot parse key " + key + " value '" + value + "'");
    return out;
  }

  static std::string strip_comment(const std::string& s) {
    size_t hash = s.find('#');
    return trim(hash == std::string::npos ? s : s.substr(0, hash));
  }

  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace dips

#endif  // DIPS_CONFIG_HPP
