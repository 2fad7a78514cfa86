#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace seqmosaic {

/// Ordered `key = value` document. Blank lines and `#` comments are ignored;
/// keys are case-sensitive and must be unique.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Keys present in the document but never read through a getter.
  std::set<std::string> unused_keys() const;

  std::string origin() const { return origin_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::string origin_;
};

}  // namespace seqmosaic
