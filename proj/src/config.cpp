#include "midnet/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "midnet/errors.hpp"

namespace midnet::config {

uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {
std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

KeyValues KeyValues::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

KeyValues KeyValues::parse_string(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key))
      throw ParseError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.values_[key] = value;
  }
  return kv;
}

const std::string& KeyValues::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidConfig("missing config key '" + key + "'");
  consumed_.insert(key);
  return it->second;
}

std::string KeyValues::get_string(const std::string& key) const { return raw(key); }

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  return raw(key);
}

int KeyValues::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  try {
    size_t pos = 0;
    int v = std::stoi(raw(key), &pos);
    if (pos != raw(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw InvalidConfig("config key '" + key + "' is not an integer: " + values_.at(key));
  }
}

uint64_t KeyValues::get_u64(const std::string& key, uint64_t fallback) const {
  if (!has(key)) return fallback;
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(raw(key), &pos);
    if (pos != raw(key).size()) throw std::invalid_argument("");
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw InvalidConfig("config key '" + key + "' is not an unsigned integer: " + values_.at(key));
  }
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(raw(key), &pos);
    if (pos != raw(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw InvalidConfig("config key '" + key + "' is not a number: " + values_.at(key));
  }
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidConfig("config key '" + key + "' is not a boolean: " + v);
}

std::vector<int> KeyValues::get_int_list(const std::string& key, std::vector<int> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  std::istringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw InvalidConfig("config key '" + key + "' has a non-integer item: " + item);
    }
  }
  return out;
}

std::vector<double> KeyValues::get_double_list(const std::string& key,
                                               std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  std::istringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw InvalidConfig("config key '" + key + "' has a non-numeric item: " + item);
    }
  }
  return out;
}

void KeyValues::set(const std::string& key, const std::string& value) { values_[key] = value; }

void KeyValues::check_all_consumed() const {
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty())
    throw InvalidConfig("unknown config keys in " + origin_ + ": " + unknown);
}

std::string KeyValues::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << text;
  if (!out) throw IoError("failed writing file: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  write_text_file(tmp, text);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("atomic rename failed for " + path + ": " + ec.message());
}

}  // namespace midnet::config
