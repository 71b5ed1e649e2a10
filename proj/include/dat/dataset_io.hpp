// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <variant>

#include "dat/tasks.hpp"

// One self-describing container per split; the byte layout is in
// docs/formats.md.

namespace dat {

using Dataset = std::variant<ImageDataset, SeqDataset>;

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& what = "dataset");

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace dat
