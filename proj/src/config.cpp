/* Copyright 2026 The EmbraceNet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "embrace/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "embrace/errors.hpp"

namespace embrace {

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t hash) {
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t hash) {
  return fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), hash);
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string trim(std::string_view text) {
  const auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(sep, start);
    out.push_back(trim(text.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

ConfigFile ConfigFile::parse(std::string_view text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? end : end - start);
    ++line_no;
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'section.key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.find('.') == std::string::npos) {
      throw ConfigError(where + ": key '" + key + "' has no section");
    }
    if (!cfg.entries_.emplace(key, value).second) {
      throw ConfigError(where + ": duplicate key '" + key + "'");
    }
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& ConfigFile::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(origin_ + ": missing key '" + key + "'");
  used_.insert(key);
  return it->second;
}

std::string ConfigFile::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

namespace {

template <typename V>
V parse_number(const std::string& text, const std::string& key, const std::string& origin) {
  V value{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [ptr, ec] = std::from_chars(b, e, value);
  if (ec != std::errc() || ptr != e || text.empty()) {
    throw ConfigError(origin + ": '" + key + "' = '" + text + "' is not a valid number");
  }
  return value;
}

}  // namespace

double ConfigFile::get_double(const std::string& key) const {
  return parse_number<double>(get(key), key, origin_);
}

std::size_t ConfigFile::get_size(const std::string& key) const {
  return parse_number<std::size_t>(get(key), key, origin_);
}

std::uint64_t ConfigFile::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(get(key), key, origin_);
}

std::vector<double> ConfigFile::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split(get(key), ',')) out.push_back(parse_number<double>(part, key, origin_));
  return out;
}

std::vector<std::size_t> ConfigFile::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& part : split(get(key), ',')) {
    out.push_back(parse_number<std::size_t>(part, key, origin_));
  }
  return out;
}

void ConfigFile::finish() const {
  std::string unknown;
  for (const auto& [key, value] : entries_) {
    if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ConfigError(origin_ + ": unknown keys: " + unknown);
}

std::string ConfigFile::canonical() const {
  std::string out;
  for (const auto& [key, value] : entries_) out += key + " = " + value + "\n";
  return out;
}

ConfigFile ConfigFile::subset(std::string_view prefix) const {
  ConfigFile out;
  out.origin_ = origin_;
  for (const auto& [key, value] : entries_) {
    if (std::string_view(key).starts_with(prefix)) out.entries_.emplace(key, value);
  }
  return out;
}

}  // namespace embrace
