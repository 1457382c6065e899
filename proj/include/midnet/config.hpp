#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace midnet::config {

uint64_t fnv1a64(std::string_view text);

// Flat "key = value" config file with '#' comments. Reads track which keys
// were consumed so typos surface as errors instead of silently keeping a
// default (see check_all_consumed).
class KeyValues {
 public:
  KeyValues() = default;
  static KeyValues parse_file(const std::string& path);
  static KeyValues parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback) const;

  void set(const std::string& key, const std::string& value);

  // Throws InvalidConfig naming any key never consumed by a getter.
  void check_all_consumed() const;

  // Canonical serialization (sorted keys), used for hashing and for writing
  // config copies next to checkpoints.
  std::string canonical() const;
  uint64_t hash() const { return fnv1a64(canonical()); }

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

// Writes via a temp file + rename so readers never observe partial content.
void write_text_file_atomic(const std::string& path, const std::string& text);

}  // namespace midnet::config
