// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dat/trainer.hpp"

namespace dat {

struct CurveModel {
  std::string name;
  ModelConfig model;
};

// Learning-curve experiment on a grid task. For each seed a pool of
// max(sizes) samples is drawn once; the training set of size k is its first
// k samples, so subsets are nested. Validation (for best-epoch selection) and
// holdout (reported accuracy) sets are fixed across every run.
struct CurveSpec {
  GridTaskKind task = GridTaskKind::SameDifferent;
  GridTaskOptions grid;
  // Glyph pool of the holdout set. Holdout needs grid.holdout_glyphs > 0.
  GlyphPool holdout_pool = GlyphPool::InVocabulary;
  std::vector<std::size_t> sizes;
  std::size_t n_seeds = 5;
  std::size_t n_val = 500;
  std::size_t n_holdout = 1000;
  std::uint64_t data_seed = 0;
  TrainConfig train;
  std::vector<CurveModel> models;

  void validate() const;
};

struct CurveRun {
  std::string config;
  std::size_t train_size = 0;
  std::size_t seed = 0;
  double accuracy = 0.0;  // holdout accuracy of the selected parameters
  double best_val_accuracy = 0.0;
  std::size_t best_step = 0;
  bool failed = false;
  std::string failure;
  double wall_seconds = 0.0;
};

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct CurvePoint {
  std::string config;
  std::size_t train_size = 0;
  std::size_t n_ok = 0;      // runs that did not fail
  std::size_t n_failed = 0;
  Interval ci;
};

struct CurveResult {
  std::vector<CurveRun> runs;      // ordered by (config, size, seed)
  std::vector<CurvePoint> points;  // ordered by (config, size)
  const CurvePoint& point(const std::string& config, std::size_t size) const;
};

// Percentile bootstrap of the mean. A constant sample gives a zero-width
// interval; an empty one throws ConfigError.
Interval bootstrap_ci(std::span<const double> xs, std::size_t resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 0);

// Runs every (config, size, seed) combination, in parallel across runs when
// OpenMP has more than one thread. progress is called from one thread at a
// time after each run.
CurveResult run_learning_curve(const CurveSpec& spec, const std::function<void(const CurveRun&)>& progress = {});

// CSV with header "config,train_size,seed,accuracy". Failed runs print "nan".
void write_curve_csv(std::ostream& out, const std::vector<CurveRun>& runs);
// Per-point summary: config,train_size,n_ok,n_failed,mean,ci_lo,ci_hi.
void write_curve_summary(std::ostream& out, const std::vector<CurvePoint>& points);

}  // namespace dat
