#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mofit {

// Flat sectioned key-value configuration. Every key has a documented default;
// parsing a file or applying overrides replaces values but cannot invent new
// keys (unknown keys raise BadConfig).
class Config {
 public:
  Config();  // all defaults

  void load_file(const std::string& path);
  void apply_override(const std::string& dotted_key, const std::string& value);

  std::string get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  void set(const std::string& key, const std::string& value);

  // FNV-1a over the canonical "key=value" listing in schema order.
  std::uint64_t hash() const;
  // Hash restricted to the given section prefixes (artifact lineage).
  std::uint64_t hash_sections(const std::vector<std::string>& sections) const;

  // The annotated default configuration text.
  static std::string default_text();

  std::string render() const;  // current values in config-file syntax

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mofit
