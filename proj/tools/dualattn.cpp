// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

// dualattn: dataset generation, training, evaluation, learning curves,
// self-verification and relation export.
//
// Anything that affects results comes from the JSON run config; flags only
// name paths. Logs go to stderr; failures print one line
//   error category=<category> message="<text>"
// and exit with status 1 (2 for usage errors).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dat/checkpoint.hpp"
#include "dat/checks.hpp"
#include "dat/run_config.hpp"

namespace fs = std::filesystem;
using namespace dat;

namespace {

void log(const std::string& msg) { std::cerr << "[dualattn] " << msg << '\n'; }

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '"') c = c == '"' ? '\'' : ' ';
  return s;
}

// Creates dir and resolves name inside it.
std::string out_path(const std::string& dir, const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output dir " + dir + ": " + ec.message());
  return (fs::path(dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  return f;
}

Json metrics_json(const Metrics& m, bool sequence) {
  Json j{{"accuracy", m.accuracy}, {"loss", m.loss}, {"count", m.count}};
  if (sequence) j["sequence_accuracy"] = m.sequence_accuracy;
  return j;
}

template <typename DS>
Metrics eval_any(const Model<float>& model, const DS& ds) {
  return evaluate(model, ds);
}

Metrics eval_dataset(const Model<float>& model, const Dataset& ds) {
  return std::visit([&](const auto& d) { return eval_any(model, d); }, ds);
}

int cmd_gen(const std::string& config_path) {
  const auto cfg = load_run_config(config_path);
  const auto splits = make_splits(cfg.task);
  for (auto [name, ds] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
    const auto path = out_path(cfg.output_dir + "/data", std::string(name) + ".bin");
    save_dataset(*ds, path);
    log("wrote " + path);
  }
  return 0;
}

int cmd_train(const std::string& config_path) {
  const auto cfg = load_run_config(config_path);
  const auto hash = config_hash(cfg);
  log("config " + hash + ": " + to_string(cfg.task.kind) + ", " + to_string(cfg.model.arch));
  const auto splits = make_splits(cfg.task);
  Model<float> model(cfg.model);
  log(std::to_string(model.parameter_count()) + " parameters");

  auto records = open_out(out_path(cfg.output_dir, "run.jsonl"));
  RunLog run_log(records, cfg.train.seed, hash);
  RunResult res;
  if (cfg.task.is_grid())
    res = train(model, std::get<ImageDataset>(splits.train), std::get<ImageDataset>(splits.val), cfg.train, &run_log);
  else
    res = train(model, std::get<SeqDataset>(splits.train), std::get<SeqDataset>(splits.val), cfg.train, &run_log);
  if (res.diverged) throw NumericError("training diverged: " + res.failure);

  const auto ckpt = out_path(cfg.output_dir, "model.ckpt");
  save_checkpoint(model, ckpt);
  log("wrote " + ckpt);
  const auto test = eval_dataset(model, splits.test);
  Json out{{"config_hash", hash},
           {"steps", res.steps_run},
           {"best_step", res.best_step},
           {"best_val_accuracy", res.best_val_accuracy},
           {"test", metrics_json(test, !cfg.task.is_grid())}};
  auto summary = open_out(out_path(cfg.output_dir, "train_summary.json"));
  summary << out.dump(2) << '\n';
  std::cout << out.dump() << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data) {
  const auto model = load_checkpoint<float>(ckpt);
  const auto ds = load_dataset(data);
  const bool seq = std::holds_alternative<SeqDataset>(ds);
  std::cout << Json{{"checkpoint", ckpt}, {"data", data}, {"metrics", metrics_json(eval_dataset(model, ds), seq)}}.dump()
            << '\n';
  return 0;
}

int cmd_curves(const std::string& config_path) {
  const auto cfg = load_run_config(config_path);
  const auto spec = curve_spec(cfg);
  log("learning curves: " + std::to_string(spec.models.size()) + " models x " + std::to_string(spec.sizes.size()) +
      " sizes x " + std::to_string(spec.n_seeds) + " seeds");
  const auto res = run_learning_curve(spec, [](const CurveRun& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s n=%zu seed=%zu acc=%.4f (%.0fs)%s", r.config.c_str(), r.train_size, r.seed,
                  r.accuracy, r.wall_seconds, r.failed ? " FAILED" : "");
    log(buf + (r.failed ? ": " + r.failure : std::string()));
  });
  auto csv = open_out(out_path(cfg.output_dir, "curves.csv"));
  write_curve_csv(csv, res.runs);
  auto summary = open_out(out_path(cfg.output_dir, "curves_summary.csv"));
  write_curve_summary(summary, res.points);
  write_curve_summary(std::cout, res.points);
  std::size_t failed = 0;
  for (const auto& r : res.runs) failed += r.failed;
  if (failed) log(std::to_string(failed) + " runs failed (recorded as nan)");
  return 0;
}

int cmd_verify(bool quick) {
  std::vector<verify::CheckResult> results{verify::check_oracle_equivalence(quick ? 8 : 24),
                                           verify::check_contraction_order(quick ? 8 : 24),
                                           verify::check_theorem(quick ? 20 : 100)};
  if (!quick) results.push_back(verify::check_model_gradients());
  for (auto& r : verify::check_invariants()) results.push_back(std::move(r));
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%s %-24s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    failed += !r.passed;
  }
  if (failed) throw VerificationError(std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed");
  return 0;
}

int cmd_export(const std::string& ckpt, const std::string& data, std::size_t index, std::size_t layer,
               std::size_t dim, const std::string& out_dir) {
  const auto model = load_checkpoint<float>(ckpt);
  const auto ds = load_dataset(data);
  std::vector<std::int32_t> targets;
  const std::size_t idx[] = {index};
  ModelInput in;
  if (const auto* img = std::get_if<ImageDataset>(&ds)) {
    if (index >= img->size()) throw DimensionError("sample index " + std::to_string(index) + " out of range");
    in = image_batch(*img, idx, targets);
  } else {
    const auto& seq = std::get<SeqDataset>(ds);
    if (index >= seq.size()) throw DimensionError("sample index " + std::to_string(index) + " out of range");
    in = sequence_batch(model.config(), seq, idx, targets);
  }
  const auto path = out_path(out_dir, "relations_s" + std::to_string(index) + "_l" + std::to_string(layer) + "_d" +
                                          std::to_string(dim) + ".csv");
  auto f = open_out(path);
  export_relations(model, in, layer, dim, f);
  log("wrote " + path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual attention transformer toolkit"};
  app.require_subcommand(1);

  std::string config, ckpt, data, out_dir = "out";
  std::size_t index = 0, layer = 0, dim = 0;
  bool quick = false;

  auto* gen = app.add_subcommand("gen", "Generate train/val/test dataset files for the config's task");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  auto* tr = app.add_subcommand("train", "Train the config's model; writes model.ckpt and run.jsonl");
  tr->add_option("--config", config, "Run config (JSON)")->required();
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset file")->required();
  auto* cu = app.add_subcommand("curves", "Run the config's learning-curve experiment");
  cu->add_option("--config", config, "Run config (JSON)")->required();
  auto* ve = app.add_subcommand("verify", "Run the oracle, gradient, theorem and invariant checks");
  ve->add_flag("--quick", quick, "Fewer instances and no gradient check");
  auto* ex = app.add_subcommand("export-relations", "Write one relation dimension of one layer as CSV");
  ex->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ex->add_option("--data", data, "Dataset file")->required();
  ex->add_option("--index", index, "Sample index in the dataset");
  ex->add_option("--layer", layer, "Layer (decoder layers follow encoder layers)");
  ex->add_option("--dim", dim, "Relation dimension");
  ex->add_option("--output-dir", out_dir, "Directory for the CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error category=usage message=\"%s\"\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (*gen) return cmd_gen(config);
    if (*tr) return cmd_train(config);
    if (*ev) return cmd_eval(ckpt, data);
    if (*cu) return cmd_curves(config);
    if (*ve) return cmd_verify(quick);
    if (*ex) return cmd_export(ckpt, data, index, layer, dim, out_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error category=%s message=\"%s\"\n", e.category(), one_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error category=internal message=\"%s\"\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
