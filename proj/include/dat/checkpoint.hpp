// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dat/model.hpp"

// Single-file checkpoint: header, embedded JSON model config, tensor
// manifest, little-endian blob, crc32. Byte layout in docs/formats.md.

namespace dat {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // numel * dtype_size, little-endian
};

struct Container {
  std::string config;  // JSON text
  std::vector<TensorRecord> tensors;
};

// Raw container codec. decode throws IoError on malformed or truncated
// input, IntegrityError on a checksum mismatch.
std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(const std::vector<std::uint8_t>& data, const std::string& what = "checkpoint");

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Model<T>& model);
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path);

// Rebuilds the model from the embedded config and fills every parameter.
// Unknown, missing, duplicated or mis-shaped tensors and a dtype other than
// T's raise IntegrityError.
template <typename T>
Model<T> decode_checkpoint(const std::vector<std::uint8_t>& data, const std::string& what = "checkpoint");
template <typename T>
Model<T> load_checkpoint(const std::string& path);

// Model config of a checkpoint without building the model.
ModelConfig checkpoint_config(const std::string& path);

// One relation dimension of one layer for the first sequence of the input:
// an n x n CSV with header "i,j,raw,tanh", values printed with %.17g.
template <typename T>
void export_relations(const Model<T>& model, const ModelInput& input, std::size_t layer, std::size_t dim,
                      std::ostream& out);

}  // namespace dat
