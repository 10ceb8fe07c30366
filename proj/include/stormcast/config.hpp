#pragma once

#include <map>
#include <string>
#include <string_view>

namespace stormcast {

// Line-based "key = value" configuration; '#' starts a comment, blank lines
// are ignored. Keys are unique (duplicates raise Errc::parse).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Each getter marks the key as consumed; leftover() lists unknown keys.
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  long get_int(const std::string& key, long fallback);
  bool get_bool(const std::string& key, bool fallback);

  // Throws Errc::invalid_argument naming the first key no getter asked for.
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> entries_;
  std::map<std::string, bool> used_;
};

}  // namespace stormcast
