// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/curves.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include <omp.h>

namespace dat {

void CurveSpec::validate() const {
  if (sizes.empty()) throw ConfigError("curves: sizes is empty");
  if (!std::is_sorted(sizes.begin(), sizes.end()) || sizes.front() == 0 ||
      std::adjacent_find(sizes.begin(), sizes.end()) != sizes.end())
    throw ConfigError("curves: sizes must be positive and strictly ascending");
  if (n_seeds == 0) throw ConfigError("curves: n_seeds must be positive");
  if (n_val == 0 || n_holdout == 0) throw ConfigError("curves: n_val and n_holdout must be positive");
  if (models.empty()) throw ConfigError("curves: no models");
  if (holdout_pool == GlyphPool::Holdout && grid.holdout_glyphs == 0)
    throw ConfigError("curves: a holdout glyph pool needs grid.holdout_glyphs > 0");
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].name.empty() || models[i].name.find_first_of(",\n\"") != std::string::npos)
      throw ConfigError("curves: model names must be non-empty and free of commas, quotes and newlines");
    for (std::size_t j = 0; j < i; ++j)
      if (models[j].name == models[i].name) throw ConfigError("curves: duplicate model name " + models[i].name);
    if (models[i].model.arch != Arch::VisionEncoder)
      throw ConfigError("curves: model " + models[i].name + " must be a VisionEncoder");
    models[i].model.validate();
  }
  train.validate();
}

const CurvePoint& CurveResult::point(const std::string& config, std::size_t size) const {
  for (const auto& p : points)
    if (p.config == config && p.train_size == size) return p;
  throw ConfigError("curves: no point for " + config + " at size " + std::to_string(size));
}

Interval bootstrap_ci(std::span<const double> xs, std::size_t resamples, double level, std::uint64_t seed) {
  if (xs.empty()) throw ConfigError("bootstrap of an empty sample");
  if (!(level > 0 && level < 1) || resamples == 0) throw ConfigError("bootstrap: bad level or resample count");
  const double n = static_cast<double>(xs.size());
  Interval out;
  for (double x : xs) out.mean += x;
  out.mean /= n;
  Rng rng(seed);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += xs[rng.below(xs.size())];
    m = s / n;
  }
  std::sort(means.begin(), means.end());
  // Nearest-rank percentiles.
  const double a = (1.0 - level) / 2.0;
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(resamples)));
    return means[std::clamp<std::size_t>(k, 1, resamples) - 1];
  };
  out.lo = std::min(rank(a), out.mean);
  out.hi = std::max(rank(1.0 - a), out.mean);
  return out;
}

CurveResult run_learning_curve(const CurveSpec& spec, const std::function<void(const CurveRun&)>& progress) {
  spec.validate();
  const std::size_t n_sizes = spec.sizes.size(), n_models = spec.models.size();
  const std::size_t max_size = spec.sizes.back();

  // Data is generated up front so every run of a seed sees the same pool.
  const auto val = gen_grid_task(spec.task, spec.n_val, Rng::derive(spec.data_seed, 0x76616c), spec.grid);
  const auto holdout =
      gen_grid_task(spec.task, spec.n_holdout, Rng::derive(spec.data_seed, 0x686f6c64), spec.grid, spec.holdout_pool);
  std::vector<ImageDataset> pools;
  for (std::size_t s = 0; s < spec.n_seeds; ++s)
    pools.push_back(gen_grid_task(spec.task, max_size, Rng::derive(spec.data_seed, 0x706f6f6c + s), spec.grid));

  CurveResult res;
  res.runs.resize(n_models * n_sizes * spec.n_seeds);
  const auto n_runs = static_cast<std::ptrdiff_t>(res.runs.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t r = 0; r < n_runs; ++r) {
    const auto k = static_cast<std::size_t>(r);
    const std::size_t mi = k / (n_sizes * spec.n_seeds), si = (k / spec.n_seeds) % n_sizes, seed = k % spec.n_seeds;
    CurveRun& run = res.runs[k];
    run.config = spec.models[mi].name;
    run.train_size = spec.sizes[si];
    run.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ModelConfig mc = spec.models[mi].model;
      mc.seed = Rng::derive(mc.seed, seed);
      TrainConfig tc = spec.train;
      tc.seed = Rng::derive(tc.seed, seed);
      Model<float> model(mc);
      const auto out = train(model, pools[seed].prefix(run.train_size), val, tc);
      run.best_val_accuracy = out.best_val_accuracy;
      run.best_step = out.best_step;
      if (out.diverged) {
        run.failed = true;
        run.failure = out.failure;
      } else {
        run.accuracy = evaluate(model, holdout).accuracy;
      }
    } catch (const std::exception& e) {
      run.failed = true;
      run.failure = e.what();
    }
    if (run.failed) run.accuracy = std::numeric_limits<double>::quiet_NaN();
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (progress) {
#pragma omp critical(dat_curve_progress)
      progress(run);
    }
  }

  for (std::size_t mi = 0; mi < n_models; ++mi)
    for (std::size_t si = 0; si < n_sizes; ++si) {
      CurvePoint p;
      p.config = spec.models[mi].name;
      p.train_size = spec.sizes[si];
      std::vector<double> acc;
      for (std::size_t s = 0; s < spec.n_seeds; ++s) {
        const auto& run = res.runs[(mi * n_sizes + si) * spec.n_seeds + s];
        if (run.failed) ++p.n_failed;
        else acc.push_back(run.accuracy);
      }
      p.n_ok = acc.size();
      if (!acc.empty()) p.ci = bootstrap_ci(acc, 1000, 0.95, Rng::derive(spec.data_seed, mi * n_sizes + si));
      else p.ci = {std::nan(""), std::nan(""), std::nan("")};
      res.points.push_back(p);
    }
  return res;
}

void write_curve_csv(std::ostream& out, const std::vector<CurveRun>& runs) {
  out << "config,train_size,seed,accuracy\n";
  char buf[32];
  for (const auto& r : runs) {
    if (r.failed) std::snprintf(buf, sizeof buf, "nan");
    else std::snprintf(buf, sizeof buf, "%.17g", r.accuracy);
    out << r.config << ',' << r.train_size << ',' << r.seed << ',' << buf << '\n';
  }
}

void write_curve_summary(std::ostream& out, const std::vector<CurvePoint>& points) {
  out << "config,train_size,n_ok,n_failed,mean,ci_lo,ci_hi\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", p.ci.mean, p.ci.lo, p.ci.hi);
    out << p.config << ',' << p.train_size << ',' << p.n_ok << ',' << p.n_failed << ',' << buf << '\n';
  }
}

}  // namespace dat
