#pragma once

// Plain "key = value" text files: one pair per line, '#' starts a comment,
// ':' is accepted in place of '='.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "miscalib/errors.hpp"

namespace miscalib {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "<input>") {
    KeyValues kv;
    kv.origin_ = origin;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string_view s = line;
      if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
      s = trim(s);
      if (s.empty()) continue;
      const auto sep = s.find_first_of("=:");
      if (sep == std::string_view::npos)
        throw ParseError(origin + ":" + std::to_string(line_no) +
                         ": expected 'key = value'");
      const std::string key(trim(s.substr(0, sep)));
      const std::string value(trim(s.substr(sep + 1)));
      if (key.empty())
        throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
      kv.values_[key] = value;
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw MissingKey(key);
    return it->second;
  }

  double number(const std::string& key) const {
    return to_number<double>(key, str(key));
  }

  std::uint64_t unsigned_integer(const std::string& key) const {
    return to_number<std::uint64_t>(key, str(key));
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return to_number<T>(key, str(key));
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  template <typename T>
  T to_number(const std::string& key, const std::string& text) const {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end)
      throw ParseError(origin_ + ": bad value for '" + key + "': " + text);
    return value;
  }

  std::string origin_;
  std::map<std::string, std::string> values_;
};

}  // namespace miscalib
