#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace tpn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-text key=value settings. Lines starting with '#' and blank lines are
/// ignored; text after a '#' on a value line is a comment. Every typed read
/// records the value actually used, defaults included.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "config");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  /// Accepts one of `choices` (comma separated).
  std::string get_choice(const std::string& key, const std::string& fallback, const std::string& choices);

  /// Throws ConfigError naming every key that no read consumed.
  void reject_unknown() const;

  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  /// key=value lines sorted by key.
  std::string resolved_text() const;

 private:
  const std::string* raw(const std::string& key);

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
  std::set<std::string> used_;
};

}  // namespace tpn
