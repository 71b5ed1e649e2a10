// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_fields.hpp"

namespace dat {

namespace {

using namespace json_detail;

constexpr Names<TaskKind, 3> kTasks{{{TaskKind::SameDifferent, "same_different"},
                                     {TaskKind::MatchPattern, "match_pattern"},
                                     {TaskKind::ReverseStrings, "reverse_strings"}}};
constexpr Names<GlyphPool, 2> kPools{{{GlyphPool::InVocabulary, "in_vocabulary"}, {GlyphPool::Holdout, "holdout"}}};
constexpr Names<OptimKind, 2> kOptims{{{OptimKind::Adam, "adam"}, {OptimKind::AdamW, "adamw"}}};
constexpr Names<ScheduleKind, 2> kSchedules{
    {{ScheduleKind::Constant, "constant"}, {ScheduleKind::WarmupCosine, "warmup_cosine"}}};

GridTaskKind grid_kind(TaskKind k) {
  return k == TaskKind::MatchPattern ? GridTaskKind::MatchPattern : GridTaskKind::SameDifferent;
}

// Longest sequence the model must embed for this task.
std::size_t needed_len(const TaskConfig& t, Arch arch) {
  return arch == Arch::DecoderOnly ? 2 * t.max_len + 3 : t.max_len + 1;
}

void check_model_fits(const TaskConfig& t, const ModelConfig& m, const std::string& who) {
  if (t.is_grid()) {
    const std::size_t side = t.grid.grid * t.grid.patch;
    if (m.arch != Arch::VisionEncoder) throw ConfigError(who + ": grid tasks need a vision_encoder model");
    if (m.image_h != side || m.image_w != side || m.channels != t.grid.channels || m.patch != t.grid.patch)
      throw ConfigError(who + ": image geometry does not match the task (" + std::to_string(side) + "x" +
                        std::to_string(side) + "x" + std::to_string(t.grid.channels) + ", patch " +
                        std::to_string(t.grid.patch) + ")");
    if (m.n_classes != 2) throw ConfigError(who + ": grid tasks are binary (n_classes = 2)");
  } else {
    if (m.arch != Arch::DecoderOnly && m.arch != Arch::EncoderDecoder)
      throw ConfigError(who + ": reverse_strings needs a decoder_only or encoder_decoder model");
    const std::size_t vocab = SeqVocab{t.alphabet}.size();
    if (m.vocab < vocab) throw ConfigError(who + ": vocab must be at least " + std::to_string(vocab));
    if (m.max_len < needed_len(t, m.arch))
      throw ConfigError(who + ": max_len must be at least " + std::to_string(needed_len(t, m.arch)));
  }
}

}  // namespace

const char* to_string(TaskKind k) { return name_of(kTasks, k); }

void TaskConfig::validate() const {
  if (n_train == 0 || n_val == 0 || n_test == 0) throw ConfigError("task: split sizes must be positive");
  if (is_grid()) {
    if (grid.holdout_glyphs >= grid.n_glyphs) throw ConfigError("task: holdout_glyphs must be smaller than n_glyphs");
    if (test_pool == GlyphPool::Holdout && grid.holdout_glyphs == 0)
      throw ConfigError("task: test_pool holdout needs holdout_glyphs > 0");
    if (kind == TaskKind::MatchPattern && grid.grid != 3) throw ConfigError("task: match_pattern needs grid = 3");
  } else {
    if (alphabet.empty()) throw ConfigError("task: alphabet is empty");
    for (std::size_t i = 0; i < alphabet.size(); ++i)
      if (alphabet.find(alphabet[i]) != i) throw ConfigError("task: alphabet has a repeated character");
    if (max_len == 0 || min_len == 0 || min_len > max_len) throw ConfigError("task: need 1 <= min_len <= max_len");
  }
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  train.validate();
  check_model_fits(task, model, "model");
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
  if (curves) {
    if (!task.is_grid()) throw ConfigError("curves: only grid tasks have learning curves");
    curve_spec(*this).validate();
    for (const auto& m : curves->models) check_model_fits(task, m.model, "curves.models." + m.name);
  }
}

Json to_json(const TaskConfig& c) {
  Json j{{"kind", to_string(c.kind)}};
  if (c.is_grid()) {
    j["grid"] = c.grid.grid;
    j["patch"] = c.grid.patch;
    j["channels"] = c.grid.channels;
    j["n_glyphs"] = c.grid.n_glyphs;
    j["glyph_seed"] = c.grid.glyph_seed;
    j["holdout_glyphs"] = c.grid.holdout_glyphs;
    j["test_pool"] = name_of(kPools, c.test_pool);
  } else {
    j["max_len"] = c.max_len;
    j["alphabet"] = c.alphabet;
    j["min_len"] = c.min_len;
  }
  j["n_train"] = c.n_train;
  j["n_val"] = c.n_val;
  j["n_test"] = c.n_test;
  j["seed"] = c.seed;
  return j;
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"steps", c.steps},
              {"batch_size", c.batch_size},
              {"optimizer",
               {{"kind", name_of(kOptims, c.optim.kind)},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"eps", c.optim.eps},
                {"weight_decay", c.optim.weight_decay},
                {"clip_norm", c.optim.clip_norm}}},
              {"schedule",
               {{"kind", name_of(kSchedules, c.schedule.kind)},
                {"max_lr", c.schedule.max_lr},
                {"min_lr", c.schedule.min_lr},
                {"warmup_steps", c.schedule.warmup_steps},
                {"total_steps", c.schedule.total_steps}}},
              {"eval_every", c.eval_every},
              {"select_best", c.select_best},
              {"stop_at_accuracy", c.stop_at_accuracy},
              {"seed", c.seed}};
}

Json to_json(const RunConfig& c) {
  Json j{{"task", to_json(c.task)}, {"model", to_json(c.model)}, {"train", to_json(c.train)}};
  if (c.curves) {
    Json models = Json::array();
    for (const auto& m : c.curves->models) models.push_back(Json{{"name", m.name}, {"model", to_json(m.model)}});
    j["curves"] = Json{{"sizes", c.curves->sizes}, {"n_seeds", c.curves->n_seeds}, {"models", models}};
  }
  j["output_dir"] = c.output_dir;
  return j;
}

namespace {

TaskConfig task_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path,
                 {"kind", "grid", "patch", "channels", "n_glyphs", "glyph_seed", "holdout_glyphs", "test_pool",
                  "max_len", "alphabet", "min_len", "n_train", "n_val", "n_test", "seed"});
  TaskConfig c;
  enum_field(j, path, "kind", kTasks, c.kind);
  const char* grid_only[] = {"grid", "patch", "channels", "n_glyphs", "glyph_seed", "holdout_glyphs", "test_pool"};
  const char* seq_only[] = {"max_len", "alphabet", "min_len"};
  for (const char* k : c.is_grid() ? std::span<const char* const>(seq_only) : std::span<const char* const>(grid_only))
    if (j.contains(k)) throw ConfigError(path + "." + k + ": not a " + to_string(c.kind) + " option");
  field(j, path, "grid", c.grid.grid);
  field(j, path, "patch", c.grid.patch);
  field(j, path, "channels", c.grid.channels);
  field(j, path, "n_glyphs", c.grid.n_glyphs);
  field(j, path, "glyph_seed", c.grid.glyph_seed);
  field(j, path, "holdout_glyphs", c.grid.holdout_glyphs);
  enum_field(j, path, "test_pool", kPools, c.test_pool);
  field(j, path, "max_len", c.max_len);
  field(j, path, "alphabet", c.alphabet);
  field(j, path, "min_len", c.min_len);
  field(j, path, "n_train", c.n_train);
  field(j, path, "n_val", c.n_val);
  field(j, path, "n_test", c.n_test);
  field(j, path, "seed", c.seed);
  return c;
}

TrainConfig train_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path,
                 {"epochs", "steps", "batch_size", "optimizer", "schedule", "eval_every", "select_best",
                  "stop_at_accuracy", "seed"});
  TrainConfig c;
  field(j, path, "epochs", c.epochs);
  field(j, path, "steps", c.steps);
  field(j, path, "batch_size", c.batch_size);
  if (auto it = j.find("optimizer"); it != j.end()) {
    const std::string p = path + ".optimizer";
    require_object(*it, p);
    reject_unknown(*it, p, {"kind", "beta1", "beta2", "eps", "weight_decay", "clip_norm"});
    enum_field(*it, p, "kind", kOptims, c.optim.kind);
    field(*it, p, "beta1", c.optim.beta1);
    field(*it, p, "beta2", c.optim.beta2);
    field(*it, p, "eps", c.optim.eps);
    field(*it, p, "weight_decay", c.optim.weight_decay);
    field(*it, p, "clip_norm", c.optim.clip_norm);
  }
  if (auto it = j.find("schedule"); it != j.end()) {
    const std::string p = path + ".schedule";
    require_object(*it, p);
    reject_unknown(*it, p, {"kind", "max_lr", "min_lr", "warmup_steps", "total_steps"});
    enum_field(*it, p, "kind", kSchedules, c.schedule.kind);
    field(*it, p, "max_lr", c.schedule.max_lr);
    field(*it, p, "min_lr", c.schedule.min_lr);
    field(*it, p, "warmup_steps", c.schedule.warmup_steps);
    field(*it, p, "total_steps", c.schedule.total_steps);
  }
  field(j, path, "eval_every", c.eval_every);
  field(j, path, "select_best", c.select_best);
  field(j, path, "stop_at_accuracy", c.stop_at_accuracy);
  field(j, path, "seed", c.seed);
  return c;
}

CurvesConfig curves_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"sizes", "n_seeds", "models"});
  CurvesConfig c;
  if (auto it = j.find("sizes"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(path + ".sizes: expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      std::size_t v = 0;
      read((*it)[i], path + ".sizes[" + std::to_string(i) + "]", v);
      c.sizes.push_back(v);
    }
  }
  field(j, path, "n_seeds", c.n_seeds);
  if (auto it = j.find("models"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(path + ".models: expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string p = path + ".models[" + std::to_string(i) + "]";
      const auto& m = (*it)[i];
      require_object(m, p);
      reject_unknown(m, p, {"name", "model"});
      CurveModel cm;
      field(m, p, "name", cm.name);
      if (!m.contains("model")) throw ConfigError(p + ": missing model");
      cm.model = model_config_from_json(m["model"], p + ".model");
      c.models.push_back(std::move(cm));
    }
  }
  return c;
}

}  // namespace

RunConfig run_config_from_json(const Json& j) {
  require_object(j, "config");
  reject_unknown(j, "config", {"task", "model", "train", "curves", "output_dir"});
  RunConfig c;
  for (const char* k : {"task", "model", "train"})
    if (!j.contains(k)) throw ConfigError(std::string("config: missing section \"") + k + "\"");
  c.task = task_from_json(j["task"], "task");
  c.model = model_config_from_json(j["model"], "model");
  c.train = train_from_json(j["train"], "train");
  if (auto it = j.find("curves"); it != j.end()) c.curves = curves_from_json(*it, "curves");
  field(j, "config", "output_dir", c.output_dir);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Splits make_splits(const TaskConfig& t) {
  t.validate();
  if (t.is_grid()) {
    const auto k = grid_kind(t.kind);
    return {gen_grid_task(k, t.n_train, Rng::derive(t.seed, 1), t.grid),
            gen_grid_task(k, t.n_val, Rng::derive(t.seed, 2), t.grid),
            gen_grid_task(k, t.n_test, Rng::derive(t.seed, 3), t.grid, t.test_pool)};
  }
  auto train = gen_reverse_strings(t.n_train, t.max_len, t.alphabet, Rng::derive(t.seed, 1), t.min_len);
  auto val = gen_reverse_strings_unseen(t.n_val, train, Rng::derive(t.seed, 2), t.min_len);
  // The test split avoids both train and validation strings.
  SeqDataset seen = train;
  seen.pairs.insert(seen.pairs.end(), val.pairs.begin(), val.pairs.end());
  auto test = gen_reverse_strings_unseen(t.n_test, seen, Rng::derive(t.seed, 3), t.min_len);
  return {std::move(train), std::move(val), std::move(test)};
}

CurveSpec curve_spec(const RunConfig& c) {
  if (!c.curves) throw ConfigError("config has no curves section");
  CurveSpec s;
  s.task = grid_kind(c.task.kind);
  s.grid = c.task.grid;
  s.holdout_pool = c.task.test_pool;
  s.sizes = c.curves->sizes;
  s.n_seeds = c.curves->n_seeds;
  s.n_val = c.task.n_val;
  s.n_holdout = c.task.n_test;
  s.data_seed = c.task.seed;
  s.train = c.train;
  s.models = c.curves->models;
  if (s.models.empty()) s.models.push_back({"model", c.model});
  return s;
}

}  // namespace dat
