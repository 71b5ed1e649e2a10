// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include "dat/config_io.hpp"
#include "dat/curves.hpp"
#include "dat/dataset_io.hpp"
#include "dat/trainer.hpp"

// The document every CLI subcommand reads. Schema in docs/config.md.

namespace dat {

enum class TaskKind { SameDifferent, MatchPattern, ReverseStrings };
const char* to_string(TaskKind k);

struct TaskConfig {
  TaskKind kind = TaskKind::SameDifferent;
  GridTaskOptions grid;
  // Glyph pool of the test split (grid tasks).
  GlyphPool test_pool = GlyphPool::InVocabulary;
  std::size_t max_len = 8;  // reverse_strings
  std::string alphabet = "abcdefgh";
  std::size_t min_len = 1;
  std::size_t n_train = 1000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  bool is_grid() const { return kind != TaskKind::ReverseStrings; }
  void validate() const;
};

struct CurvesConfig {
  std::vector<std::size_t> sizes;
  std::size_t n_seeds = 5;
  std::vector<CurveModel> models;  // empty: the run's model, named "model"
};

struct RunConfig {
  TaskConfig task;
  ModelConfig model;
  TrainConfig train;
  std::optional<CurvesConfig> curves;
  std::string output_dir = "out";

  // Checks every section and their mutual consistency (model geometry and
  // vocabulary against the task).
  void validate() const;
};

Json to_json(const TaskConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);
// Parses and validates; ConfigError on schema violations, IoError when the
// file is unreadable.
RunConfig load_run_config(const std::string& path);

// FNV-1a 64 of the canonical JSON form, as 16 hex digits.
std::string config_hash(const RunConfig& c);

struct Splits {
  Dataset train, val, test;
};
// Deterministic train/val/test splits of the configured task.
Splits make_splits(const TaskConfig& task);

CurveSpec curve_spec(const RunConfig& c);

}  // namespace dat
