#include "tpn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace tpn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Config Config::parse(std::istream& in, const std::string& origin) {
  Config c;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (c.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string* Config::raw(const std::string& key) {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) {
  const std::string* v = raw(key);
  return resolved_[key] = v ? *v : fallback;
}

int Config::get_int(const std::string& key, int fallback) {
  const std::string* v = raw(key);
  const int out = v ? parse_number<int>(key, *v) : fallback;
  resolved_[key] = std::to_string(out);
  return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) {
  const std::string* v = raw(key);
  const std::uint64_t out = v ? parse_number<std::uint64_t>(key, *v) : fallback;
  resolved_[key] = std::to_string(out);
  return out;
}

double Config::get_double(const std::string& key, double fallback) {
  const std::string* v = raw(key);
  const double out = v ? parse_number<double>(key, *v) : fallback;
  resolved_[key] = format_double(out);
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) {
  const std::string* v = raw(key);
  bool out = fallback;
  if (v) {
    if (*v == "1" || *v == "true" || *v == "yes")
      out = true;
    else if (*v == "0" || *v == "false" || *v == "no")
      out = false;
    else
      throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
  }
  resolved_[key] = out ? "true" : "false";
  return out;
}

std::string Config::get_choice(const std::string& key, const std::string& fallback, const std::string& choices) {
  const std::string v = get_string(key, fallback);
  std::stringstream ss(choices);
  std::string c;
  while (std::getline(ss, c, ','))
    if (c == v) return v;
  throw ConfigError("config key '" + key + "': '" + v + "' is not one of " + choices);
}

void Config::reject_unknown() const {
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
}

std::string Config::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : resolved_) out += k + "=" + v + "\n";
  return out;
}

}  // namespace tpn
