// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dat/model.hpp"
#include "dat/optim.hpp"
#include "dat/tasks.hpp"

namespace dat {

struct TrainConfig {
  // Exactly one of epochs / steps is non-zero.
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::size_t batch_size = 32;
  OptimConfig optim;
  ScheduleConfig schedule;
  // Evaluate every eval_every steps; 0 means once per epoch (epoch mode) or
  // only at the end (step mode).
  std::size_t eval_every = 0;
  // Restore the parameters of the best validation evaluation at the end.
  bool select_best = true;
  // Stop once validation accuracy reaches this value (0 disables).
  double stop_at_accuracy = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One validation evaluation and the training losses since the previous one.
struct EvalRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<double> step_losses;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct RunResult {
  std::vector<EvalRecord> evals;
  double best_val_accuracy = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool diverged = false;
  std::string failure;
};

// Line-delimited JSON records, one per evaluation. wall_time is the only
// field that varies between identical runs.
class RunLog {
 public:
  RunLog(std::ostream& out, std::uint64_t seed, std::string config_hash) : out_(out), seed_(seed), hash_(std::move(config_hash)) {}
  void write(const EvalRecord& r) const;

 private:
  std::ostream& out_;
  std::uint64_t seed_;
  std::string hash_;
};

struct Metrics {
  double accuracy = 0.0;  // classification accuracy or next-token accuracy
  double loss = 0.0;
  double sequence_accuracy = 0.0;  // sequence tasks: fully correct targets
  std::size_t count = 0;           // samples (classification) or scored tokens
};

// Classification on grid images (VisionEncoder models).
template <typename T>
Metrics evaluate(const Model<T>& model, const ImageDataset& ds, std::size_t batch = 256);
// Teacher-forced next-token accuracy over target characters and EOS
// (DecoderOnly and EncoderDecoder models).
template <typename T>
Metrics evaluate(const Model<T>& model, const SeqDataset& ds, std::size_t batch = 256);

template <typename T>
RunResult train(Model<T>& model, const ImageDataset& train_set, const ImageDataset& val_set, const TrainConfig& cfg,
                const RunLog* log = nullptr);
template <typename T>
RunResult train(Model<T>& model, const SeqDataset& train_set, const SeqDataset& val_set, const TrainConfig& cfg,
                const RunLog* log = nullptr);

// Builds a model input and flat targets for the given sample indices.
ModelInput image_batch(const ImageDataset& ds, std::span<const std::size_t> idx, std::vector<std::int32_t>& targets);
ModelInput sequence_batch(const ModelConfig& cfg, const SeqDataset& ds, std::span<const std::size_t> idx,
                          std::vector<std::int32_t>& targets);

}  // namespace dat
