// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

// Typed JSON field readers shared by the config parsers.

#pragma once

#include <array>
#include <string>
#include <utility>

#include "dat/config_io.hpp"
#include "dat/tensor.hpp"

namespace dat::json_detail {

template <typename E, std::size_t N>
using Names = std::array<std::pair<E, const char*>, N>;

template <typename E, std::size_t N>
const char* name_of(const Names<E, N>& names, E v) {
  for (const auto& [e, s] : names)
    if (e == v) return s;
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const Names<E, N>& names, const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  const auto s = j.get<std::string>();
  for (const auto& [e, n] : names)
    if (s == n) return e;
  std::string allowed;
  for (const auto& [e, n] : names) allowed += std::string(allowed.empty() ? "" : "|") + n;
  throw ConfigError(path + ": unknown value \"" + s + "\" (expected " + allowed + ")");
}

inline void read(const Json& j, const std::string& path, std::size_t& out) {
  // Parsed JSON yields unsigned; values set from code may be signed.
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
    throw ConfigError(path + ": expected a non-negative integer");
  out = j.get<std::size_t>();
}
inline void read(const Json& j, const std::string& path, std::int32_t& out) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  out = j.get<std::int32_t>();
}
inline void read(const Json& j, const std::string& path, double& out) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  out = j.get<double>();
}
inline void read(const Json& j, const std::string& path, bool& out) {
  if (!j.is_boolean()) throw ConfigError(path + ": expected true or false");
  out = j.get<bool>();
}

inline void read(const Json& j, const std::string& path, std::string& out) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  out = j.get<std::string>();
}

template <typename V>
void field(const Json& j, const std::string& path, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) read(*it, path + "." + key, out);
}

template <typename E, std::size_t N>
void enum_field(const Json& j, const std::string& path, const char* key, const Names<E, N>& names, E& out) {
  if (auto it = j.find(key); it != j.end()) out = parse_enum(names, *it, path + "." + key);
}

}  // namespace dat::json_detail
