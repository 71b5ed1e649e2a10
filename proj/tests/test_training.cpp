// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "dat/curves.hpp"
#include "dat/ops.hpp"
#include "dat/trainer.hpp"

namespace dat {
namespace {

// Parameter with its gradient buffer filled directly.
NamedParam<double> param_with_grad(const std::string& name, Shape shape, std::vector<double> value,
                                   std::vector<double> grad) {
  auto t = Tensor<double>::parameter(std::move(shape), std::move(value));
  auto g = t.mutable_grad();
  std::copy(grad.begin(), grad.end(), g.begin());
  return {name, t};
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

TEST(Adam, SingleScalarStepMatchesHandFormula) {
  for (double g : {0.3, -2.5, 1e-6}) {
    for (auto kind : {OptimKind::Adam, OptimKind::AdamW}) {
      auto p = param_with_grad("w", {1}, {1.5}, {g});
      OptimConfig oc;
      oc.kind = kind;
      Optimizer<double> opt({p}, oc);
      const double lr = 0.01;
      opt.step(lr);
      // Bias-corrected moments after one step are g and g^2.
      const double want = 1.5 - lr * g / (std::abs(g) + oc.eps);
      EXPECT_DOUBLE_EQ(p.tensor.data()[0], want) << "g=" << g;
      EXPECT_NEAR(opt.first_moments()[0][0], (1 - oc.beta1) * g, 1e-18);
      EXPECT_NEAR(opt.second_moments()[0][0], (1 - oc.beta2) * g * g, 1e-18);
    }
  }
}

TEST(Adam, TwoStepsMatchHandRecurrence) {
  auto p = param_with_grad("w", {1}, {0.0}, {1.0});
  OptimConfig oc;
  Optimizer<double> opt({p}, oc);
  opt.step(0.1);
  p.tensor.mutable_grad()[0] = -0.5;
  opt.step(0.1);
  double m = 0, v = 0, w = 0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 1.0 : -0.5;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.tensor.data()[0], w, 1e-15);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adam, ZeroGradsWithoutDecayLeaveParamsUnchanged) {
  auto a = param_with_grad("a", {2, 2}, {1, -2, 3, 4}, {0, 0, 0, 0});
  auto b = Tensor<double>::parameter({3}, {5, 6, 7});  // no gradient at all
  const auto before_a = values(a.tensor), before_b = values(b);
  Optimizer<double> opt({a, {"b", b}}, OptimConfig{});
  for (int i = 0; i < 3; ++i) opt.step(1e-2);
  EXPECT_EQ(values(a.tensor), before_a);
  EXPECT_EQ(values(b), before_b);
}

TEST(Adam, LrZeroIsBitIdenticalEvenWithDecay) {
  auto p = param_with_grad("w", {2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, 0.6}, {1, 2, 3, 4, 5, 6});
  const auto before = values(p.tensor);
  for (auto kind : {OptimKind::Adam, OptimKind::AdamW}) {
    OptimConfig oc;
    oc.kind = kind;
    oc.weight_decay = 0.1;
    oc.clip_norm = 1.0;
    Optimizer<double> opt({p}, oc);
    opt.step(0.0);
    EXPECT_EQ(std::memcmp(p.tensor.data().data(), before.data(), before.size() * sizeof(double)), 0);
  }
}

TEST(Adam, ClippingScalesNormTenToOne) {
  // Global norm sqrt(6^2 + 8^2) = 10 over two tensors.
  auto a = param_with_grad("a", {1}, {0.0}, {6.0});
  auto b = param_with_grad("b", {1}, {0.0}, {8.0});
  OptimConfig oc;
  oc.clip_norm = 1.0;
  oc.beta1 = 0.0;  // m = clipped gradient
  Optimizer<double> opt({a, b}, oc);
  EXPECT_DOUBLE_EQ(opt.step(0.0), 10.0);
  EXPECT_NEAR(opt.first_moments()[0][0], 0.6, 1e-15);
  EXPECT_NEAR(opt.first_moments()[1][0], 0.8, 1e-15);
  // Below the threshold nothing is scaled.
  auto c = param_with_grad("c", {1}, {0.0}, {0.5});
  Optimizer<double> small({c}, oc);
  small.step(0.0);
  EXPECT_DOUBLE_EQ(small.first_moments()[0][0], 0.5);
}

TEST(Adam, WeightDecayOnlyOnMatrices) {
  auto w = param_with_grad("w", {1, 1}, {2.0}, {0.0});
  auto b = param_with_grad("b", {1}, {2.0}, {0.0});
  OptimConfig oc;
  oc.kind = OptimKind::AdamW;
  oc.weight_decay = 0.1;
  Optimizer<double> opt({w, b}, oc);
  opt.step(0.5);
  EXPECT_DOUBLE_EQ(w.tensor.data()[0], 2.0 - 0.5 * 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(b.tensor.data()[0], 2.0);
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
  auto a = param_with_grad("first", {1}, {1.0}, {1.0});
  auto b = param_with_grad("second.W", {2}, {1.0, 1.0}, {0.0, NAN});
  Optimizer<double> opt({a, b}, OptimConfig{});
  try {
    opt.step(0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("second.W"), std::string::npos);
  }
  EXPECT_EQ(a.tensor.data()[0], 1.0);
  EXPECT_EQ(opt.steps(), 0u);
  b.tensor.mutable_grad()[1] = INFINITY;
  EXPECT_THROW(opt.step(0.1), NumericError);
}

TEST(Adam, BadConfigRejected) {
  OptimConfig oc;
  oc.beta1 = 1.0;
  EXPECT_THROW(Optimizer<double>({}, oc), ConfigError);
  oc = {};
  oc.eps = 0;
  EXPECT_THROW(oc.validate(), ConfigError);
}

TEST(Schedule, Boundaries) {
  ScheduleConfig s;
  s.kind = ScheduleKind::WarmupCosine;
  s.max_lr = 1e-3;
  s.min_lr = 1e-5;
  s.warmup_steps = 10;
  s.total_steps = 110;
  s.validate();
  EXPECT_DOUBLE_EQ(schedule_lr(s, 0), 1e-3 / 10);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 4), 1e-3 * 5 / 10);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 10), 1e-3);
  EXPECT_NEAR(schedule_lr(s, 60), (1e-3 + 1e-5) / 2, 1e-15);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 110), 1e-5);
  EXPECT_THROW(schedule_lr(s, 111), ConfigError);
  double prev = INFINITY;
  for (std::size_t t = 10; t <= 110; ++t) {
    EXPECT_LE(schedule_lr(s, t), prev);
    prev = schedule_lr(s, t);
  }
  s.warmup_steps = 0;
  EXPECT_DOUBLE_EQ(schedule_lr(s, 0), 1e-3);
  ScheduleConfig c;
  EXPECT_DOUBLE_EQ(schedule_lr(c, 123456), c.max_lr);
}

TEST(Schedule, InvalidConfigs) {
  ScheduleConfig s;
  s.kind = ScheduleKind::WarmupCosine;
  s.total_steps = 5;
  s.warmup_steps = 6;
  EXPECT_THROW(s.validate(), ConfigError);
  s.warmup_steps = 0;
  s.min_lr = 1.0;
  s.max_lr = 0.1;
  EXPECT_THROW(s.validate(), ConfigError);
}

// ---- training loop ---------------------------------------------------------

GridTaskOptions tiny_grid() {
  GridTaskOptions o;
  o.patch = 4;
  o.n_glyphs = 6;
  return o;
}

ModelConfig tiny_vision(std::size_t layers = 1) {
  ModelConfig c;
  c.arch = Arch::VisionEncoder;
  c.n_layers = layers;
  c.attn.d_model = 16;
  c.attn.n_h_sa = 2;
  c.attn.n_h_ra = 2;
  c.attn.d_r = 4;
  c.d_ff = 32;
  c.image_h = c.image_w = 12;
  c.channels = 3;
  c.patch = 4;
  c.symbols.max_len = 16;
  return c;
}

TrainConfig steps_config(std::size_t steps, std::size_t batch) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = batch;
  t.select_best = false;
  return t;
}

TEST(Training, MemorizesEightSamples) {
  const auto data = gen_same_different(8, 4, tiny_grid());
  Model<float> model(tiny_vision(1));
  auto tc = steps_config(2000, 8);
  tc.schedule.max_lr = 3e-3;
  const auto res = train(model, data, data, tc);
  ASSERT_FALSE(res.diverged) << res.failure;
  const auto m = evaluate(model, data);
  EXPECT_LT(m.loss, 0.01);
  EXPECT_EQ(m.accuracy, 1.0);
}

TEST(Training, StopsEarlyAtTargetAccuracy) {
  const auto data = gen_same_different(8, 4, tiny_grid());
  Model<float> model(tiny_vision(1));
  auto tc = steps_config(2000, 8);
  tc.schedule.max_lr = 3e-3;
  tc.eval_every = 10;
  tc.stop_at_accuracy = 1.0;
  const auto res = train(model, data, data, tc);
  ASSERT_FALSE(res.diverged);
  EXPECT_LT(res.steps_run, 2000u);
  EXPECT_EQ(res.steps_run % 10, 0u);
  EXPECT_EQ(res.evals.back().val_accuracy, 1.0);
}

TEST(Training, FreshLmLossIsNearLogVocab) {
  ModelConfig c;
  c.arch = Arch::DecoderOnly;
  c.n_layers = 2;
  c.attn.d_model = 32;
  c.attn.n_h_sa = 2;
  c.attn.n_h_ra = 2;
  c.attn.d_r = 4;
  c.d_ff = 64;
  const std::string alphabet = "abcdefghijkl";
  c.vocab = SeqVocab{alphabet}.size();
  c.max_len = 2 * 8 + 3;
  c.symbols.max_len = c.max_len;
  c.pad_id = SeqVocab::kPad;
  const auto ds = gen_reverse_strings(32, 8, alphabet, 1);
  for (std::uint64_t seed : {0, 1, 2}) {
    c.seed = seed;
    Model<double> model(c);
    const auto m = evaluate(model, ds);
    EXPECT_NEAR(m.loss, std::log(static_cast<double>(c.vocab)), 0.1 * std::log(static_cast<double>(c.vocab)));
  }
}

TEST(Training, LrZeroRunLeavesModelBitIdentical) {
  const auto data = gen_same_different(16, 2, tiny_grid());
  Model<float> model(tiny_vision(1));
  std::vector<std::vector<float>> before;
  for (const auto& p : model.parameters()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  auto tc = steps_config(3, 8);
  tc.schedule.max_lr = 0.0;
  train(model, data, data, tc);
  const auto after = model.parameters();
  for (std::size_t i = 0; i < after.size(); ++i)
    EXPECT_EQ(std::memcmp(after[i].tensor.data().data(), before[i].data(), before[i].size() * sizeof(float)), 0)
        << after[i].name;
}

TEST(Training, RunsAreDeterministicAndLogged) {
  const auto data = gen_same_different(40, 2, tiny_grid());
  const auto val = gen_same_different(20, 3, tiny_grid());
  auto tc = steps_config(10, 8);
  tc.eval_every = 4;
  tc.seed = 5;
  tc.optim.kind = OptimKind::AdamW;
  tc.optim.weight_decay = 0.1;
  tc.schedule = {ScheduleKind::WarmupCosine, 1e-3, 1e-5, 2, 10};
  std::ostringstream log_a, log_b;
  Model<float> a(tiny_vision()), b(tiny_vision());
  RunLog la(log_a, tc.seed, "cafe"), lb(log_b, tc.seed, "cafe");
  const auto ra = train(a, data, val, tc, &la);
  const auto rb = train(b, data, val, tc, &lb);
  EXPECT_EQ(ra.steps_run, 10u);
  ASSERT_EQ(ra.evals.size(), rb.evals.size());
  for (std::size_t i = 0; i < ra.evals.size(); ++i) EXPECT_EQ(ra.evals[i].step_losses, rb.evals[i].step_losses);
  // Evaluations at steps 4, 8 and the final one.
  ASSERT_EQ(ra.evals.size(), 3u);
  std::istringstream lines(log_a.str());
  std::string line;
  std::size_t prev_step = 0, n = 0, total_losses = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "epoch", "seed", "config_hash", "lr", "step_losses", "val_accuracy", "val_loss",
                            "wall_time"})
      EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["config_hash"], "cafe");
    EXPECT_EQ(j["seed"], 5);
    EXPECT_GT(j["step"].get<std::size_t>(), prev_step);
    prev_step = j["step"].get<std::size_t>();
    total_losses += j["step_losses"].size();
    ++n;
  }
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(prev_step, 10u);
  EXPECT_EQ(total_losses, 10u);
}

TEST(Training, HugeLearningRateIsReportedAsDivergence) {
  const auto data = gen_same_different(16, 2, tiny_grid());
  Model<float> model(tiny_vision());
  auto tc = steps_config(30, 8);
  tc.schedule.max_lr = 1e30;
  const auto res = train(model, data, data, tc);
  EXPECT_TRUE(res.diverged);
  EXPECT_FALSE(res.failure.empty());
}

TEST(Training, SequenceModelsNeedEnoughVocab) {
  ModelConfig c;
  c.arch = Arch::DecoderOnly;
  c.attn.d_model = 16;
  c.d_ff = 16;
  c.vocab = 5;
  c.max_len = 11;
  c.symbols.max_len = 11;
  const auto ds = gen_reverse_strings(4, 4, "abc", 1);
  Model<float> model(c);
  EXPECT_THROW(evaluate(model, ds), ConfigError);
  EXPECT_THROW(train(model, ds, ds, steps_config(1, 2)), ConfigError);
}

TEST(Training, ConfigValidation) {
  TrainConfig t;
  EXPECT_THROW(t.validate(), ConfigError);  // neither epochs nor steps
  t.epochs = 1;
  t.steps = 1;
  EXPECT_THROW(t.validate(), ConfigError);
  t.steps = 0;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

// ---- learning curves ---------------------------------------------------------

TEST(Bootstrap, ConstantSampleHasZeroWidth) {
  const std::vector<double> xs(7, 0.8125);
  const auto ci = bootstrap_ci(xs);
  EXPECT_EQ(ci.mean, 0.8125);
  EXPECT_EQ(ci.lo, 0.8125);
  EXPECT_EQ(ci.hi, 0.8125);
  const std::vector<double> one{0.5};
  const auto d = bootstrap_ci(one);
  EXPECT_EQ(d.lo, 0.5);
  EXPECT_EQ(d.hi, 0.5);
  EXPECT_THROW(bootstrap_ci(std::span<const double>{}), ConfigError);
}

TEST(Bootstrap, IntervalBracketsTheMeanAndShrinksWithN) {
  Rng rng(3);
  std::vector<double> small(10), large(1000);
  for (auto& x : small) x = rng.uniform();
  for (auto& x : large) x = rng.uniform();
  const auto a = bootstrap_ci(small, 1000, 0.95, 1), b = bootstrap_ci(large, 1000, 0.95, 1);
  EXPECT_LE(a.lo, a.mean);
  EXPECT_GE(a.hi, a.mean);
  EXPECT_LT(b.hi - b.lo, a.hi - a.lo);
  // Uniform(0,1): the 95% interval of a 1000-sample mean is about +-0.018.
  EXPECT_NEAR(b.hi - b.lo, 2 * 1.96 * std::sqrt(1.0 / 12 / 1000), 0.01);
  const auto again = bootstrap_ci(small, 1000, 0.95, 1);
  EXPECT_EQ(again.lo, a.lo);
  EXPECT_EQ(again.hi, a.hi);
}

CurveSpec tiny_curve() {
  CurveSpec s;
  s.grid = tiny_grid();
  s.sizes = {8, 16};
  s.n_seeds = 2;
  s.n_val = 16;
  s.n_holdout = 32;
  s.train = steps_config(4, 8);
  s.models = {{"dat", tiny_vision()}, {"tf", [] {
                                         auto c = tiny_vision();
                                         c.attn.n_h_sa = 4;
                                         c.attn.n_h_ra = 0;
                                         return c;
                                       }()}};
  return s;
}

std::string curve_bytes(const CurveResult& r) {
  std::ostringstream o;
  write_curve_csv(o, r.runs);
  write_curve_summary(o, r.points);
  return o.str();
}

TEST(Curves, DeterministicRerunGivesIdenticalBytes) {
  const auto spec = tiny_curve();
  std::size_t calls = 0;
  const auto a = run_learning_curve(spec, [&](const CurveRun&) { ++calls; });
  const auto b = run_learning_curve(spec);
  EXPECT_EQ(calls, 8u);
  EXPECT_EQ(curve_bytes(a), curve_bytes(b));
  ASSERT_EQ(a.runs.size(), 8u);
  ASSERT_EQ(a.points.size(), 4u);
  EXPECT_EQ(a.runs.front().config, "dat");
  EXPECT_EQ(a.points.back().config, "tf");
  EXPECT_EQ(a.point("tf", 16).n_ok, 2u);
  std::istringstream csv(curve_bytes(a));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "config,train_size,seed,accuracy");
}

TEST(Curves, SingleSeedPointIsDegenerate) {
  auto spec = tiny_curve();
  spec.sizes = {8};
  spec.n_seeds = 1;
  spec.models.resize(1);
  const auto r = run_learning_curve(spec);
  ASSERT_EQ(r.points.size(), 1u);
  const auto& p = r.points[0];
  EXPECT_EQ(p.ci.lo, p.ci.mean);
  EXPECT_EQ(p.ci.hi, p.ci.mean);
  EXPECT_EQ(p.ci.mean, r.runs[0].accuracy);
}

TEST(Curves, DivergedRunsAreRecordedAsFailed) {
  auto spec = tiny_curve();
  spec.train.schedule.max_lr = 1e30;
  spec.train.steps = 30;
  spec.models.resize(1);
  spec.sizes = {8};
  const auto r = run_learning_curve(spec);
  for (const auto& run : r.runs) {
    EXPECT_TRUE(run.failed);
    EXPECT_TRUE(std::isnan(run.accuracy));
  }
  EXPECT_EQ(r.points[0].n_failed, 2u);
  EXPECT_EQ(r.points[0].n_ok, 0u);
  EXPECT_NE(curve_bytes(r).find(",nan"), std::string::npos);
}

TEST(Curves, SpecValidation) {
  auto s = tiny_curve();
  s.sizes = {16, 8};
  EXPECT_THROW(run_learning_curve(s), ConfigError);
  s = tiny_curve();
  s.models[1].name = "a,b";
  EXPECT_THROW(s.validate(), ConfigError);
  s = tiny_curve();
  s.holdout_pool = GlyphPool::Holdout;
  EXPECT_THROW(s.validate(), ConfigError);
  s = tiny_curve();
  s.models[0].model.arch = Arch::EncoderOnly;
  EXPECT_THROW(s.validate(), ConfigError);
}

}  // namespace
}  // namespace dat
