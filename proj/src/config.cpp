#include "stormcast/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "stormcast/error.hpp"

namespace stormcast {

namespace {

std::string trim(std::string_view s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(s.front())) s.remove_prefix(1);
  while (!s.empty() && issp(s.back())) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::parse, "config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw Error(Errc::parse, "config line " + std::to_string(lineno) + ": empty key");
    if (!cfg.entries_.emplace(key, value).second)
      throw Error(Errc::parse, "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  used_[key] = true;
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw Error(Errc::parse, "config key '" + key + "': expected a number, got '" + s + "'");
}

long KeyValueConfig::get_int(const std::string& key, long fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(Errc::parse, "config key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error(Errc::parse, "config key '" + key + "': expected a boolean, got '" + s + "'");
}

void KeyValueConfig::reject_unknown() const {
  for (const auto& [key, value] : entries_)
    if (!used_.count(key)) throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
}

}  // namespace stormcast
