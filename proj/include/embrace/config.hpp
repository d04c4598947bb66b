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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace embrace {

// 64-bit FNV-1a.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t hash = kFnvOffset);
std::uint64_t fnv1a(std::string_view text, std::uint64_t hash = kFnvOffset);
std::string hex64(std::uint64_t value);

// Flat "section.key = value" text. '#' starts a comment; blank lines are
// skipped. Every key read through a getter is marked as used so callers can
// reject unknown keys with finish().
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text, const std::string& origin = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return entries_; }
  const std::string& origin() const { return origin_; }

  // Throws ConfigError naming every key no getter asked for.
  void finish() const;
  // Sorted "key = value" lines.
  std::string canonical() const;
  // Entries whose key starts with `prefix`.
  ConfigFile subset(std::string_view prefix) const;

 private:
  std::map<std::string, std::string> entries_;
  std::string origin_;
  mutable std::set<std::string> used_;
};

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace embrace
