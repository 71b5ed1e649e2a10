// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "dat/config.hpp"

// JSON mapping for configs. Readers reject unknown keys and wrong types with
// ConfigError naming the offending path; absent keys keep their defaults.

namespace dat {

using Json = nlohmann::ordered_json;

Json to_json(const DualAttnConfig& c);
Json to_json(const SymbolConfig& c);
Json to_json(const ModelConfig& c);

DualAttnConfig dual_attn_config_from_json(const Json& j, const std::string& path = "attn");
SymbolConfig symbol_config_from_json(const Json& j, const std::string& path = "symbols");
ModelConfig model_config_from_json(const Json& j, const std::string& path = "model");

// Small helpers shared with the run-config reader.
namespace json_detail {
void require_object(const Json& j, const std::string& path);
void reject_unknown(const Json& j, const std::string& path, std::initializer_list<const char*> known);
}  // namespace json_detail

}  // namespace dat
