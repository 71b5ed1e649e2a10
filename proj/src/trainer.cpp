// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dat/ops.hpp"

namespace dat {

void TrainConfig::validate() const {
  if ((epochs == 0) == (steps == 0)) throw ConfigError("train: set exactly one of epochs and steps");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (stop_at_accuracy < 0 || stop_at_accuracy > 1) throw ConfigError("train: stop_at_accuracy must lie in [0, 1]");
  optim.validate();
  schedule.validate();
}

void RunLog::write(const EvalRecord& r) const {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["seed"] = seed_;
  j["config_hash"] = hash_;
  j["lr"] = r.lr;
  j["step_losses"] = r.step_losses;
  j["val_accuracy"] = r.val_accuracy;
  j["val_loss"] = r.val_loss;
  j["wall_time"] = r.wall_seconds;
  out_ << j.dump() << '\n';
  out_.flush();
}

ModelInput image_batch(const ImageDataset& ds, std::span<const std::size_t> idx, std::vector<std::int32_t>& targets) {
  ModelInput in;
  in.batch = idx.size();
  in.images.resize(idx.size() * ds.image_bytes());
  targets.resize(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto img = ds.image(idx[b]);
    for (std::size_t i = 0; i < img.size(); ++i) in.images[b * img.size() + i] = static_cast<float>(img[i]) / 255.0f;
    targets[b] = ds.labels[idx[b]];
  }
  return in;
}

ModelInput sequence_batch(const ModelConfig& cfg, const SeqDataset& ds, std::span<const std::size_t> idx,
                          std::vector<std::int32_t>& targets) {
  if (cfg.vocab < SeqVocab{ds.alphabet}.size())
    throw ConfigError("model vocab " + std::to_string(cfg.vocab) + " is smaller than the task vocabulary " +
                      std::to_string(SeqVocab{ds.alphabet}.size()));
  ModelInput in;
  in.batch = idx.size();
  if (cfg.arch == Arch::DecoderOnly) {
    auto lay = encode_lm(ds, idx);
    in.len = lay.len;
    in.tokens = std::move(lay.tokens);
    targets = std::move(lay.targets);
  } else if (cfg.arch == Arch::EncoderDecoder) {
    auto lay = encode_seq2seq(ds, idx);
    in.len = lay.src_len;
    in.tokens = std::move(lay.src);
    in.tgt_len = lay.tgt_len;
    in.tgt_tokens = std::move(lay.tgt_in);
    targets = std::move(lay.targets);
  } else {
    throw ConfigError("sequence tasks need a DecoderOnly or EncoderDecoder model");
  }
  return in;
}

namespace {

// Accumulates loss and argmax accuracy over scored rows of a logits tensor.
template <typename T>
struct Scorer {
  double loss_sum = 0.0;
  std::size_t correct = 0, scored = 0;
  std::size_t seq_ok = 0, seqs = 0;

  // logits [rows, C] flattened; rows_per_seq groups rows into sequences.
  void add(const Tensor<T>& logits, const std::vector<std::int32_t>& targets, std::size_t rows_per_seq) {
    const std::size_t c = logits.dim(-1), rows = targets.size();
    const auto v = logits.data();
    bool seq_good = true;
    bool seq_has = false;
    for (std::size_t r = 0; r < rows; ++r) {
      if (targets[r] >= 0) {
        const T* row = v.data() + r * c;
        std::size_t best = 0;
        double mx = static_cast<double>(row[0]);
        for (std::size_t k = 1; k < c; ++k)
          if (static_cast<double>(row[k]) > mx) mx = static_cast<double>(row[best = k]);
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        loss_sum += std::log(z) + mx - static_cast<double>(row[targets[r]]);
        const bool ok = best == static_cast<std::size_t>(targets[r]);
        correct += ok;
        ++scored;
        seq_good &= ok;
        seq_has = true;
      }
      if ((r + 1) % rows_per_seq == 0) {
        if (seq_has) {
          seq_ok += seq_good;
          ++seqs;
        }
        seq_good = true;
        seq_has = false;
      }
    }
  }

  Metrics result() const {
    Metrics m;
    m.count = scored;
    m.accuracy = scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
    m.loss = scored ? loss_sum / static_cast<double>(scored) : 0.0;
    m.sequence_accuracy = seqs ? static_cast<double>(seq_ok) / static_cast<double>(seqs) : 0.0;
    return m;
  }
};

template <typename T, typename Batch>
Metrics evaluate_impl(const Model<T>& model, std::size_t n, std::size_t batch, Batch make_batch) {
  NoGradGuard guard;
  Scorer<T> sc;
  std::vector<std::size_t> idx;
  std::vector<std::int32_t> targets;
  for (std::size_t start = 0; start < n; start += batch) {
    idx.resize(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    auto in = make_batch(std::span<const std::size_t>(idx), targets);
    sc.add(model.forward(in), targets, targets.size() / idx.size());
  }
  return sc.result();
}

template <typename T, typename DS, typename Batch>
RunResult train_impl(Model<T>& model, const DS& tr, const DS& va, const TrainConfig& cfg, const RunLog* log,
                     Batch make_batch) {
  cfg.validate();
  const std::size_t n = tr.size();
  if (n == 0) throw ConfigError("train: empty training set");
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.steps ? cfg.steps : cfg.epochs * per_epoch;
  ScheduleConfig sched = cfg.schedule;
  if (sched.kind == ScheduleKind::WarmupCosine && sched.total_steps < total) sched.total_steps = total;

  Optimizer<T> opt(model.parameters(), cfg.optim);
  Rng rng(Rng::derive(cfg.seed, 0x747261696e));
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  std::vector<std::vector<T>> best;
  std::vector<double> pending;
  bool have_eval = false;

  auto do_eval = [&](std::size_t step, std::size_t epoch, double lr) {
    const auto m = evaluate_impl(model, va.size(), 256, [&](auto idx, auto& t) { return make_batch(va, idx, t); });
    EvalRecord r;
    r.step = step;
    r.epoch = epoch;
    r.step_losses = std::move(pending);
    pending.clear();
    r.val_accuracy = m.accuracy;
    r.val_loss = m.loss;
    r.lr = lr;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) log->write(r);
    if (!have_eval || m.accuracy > res.best_val_accuracy) {
      res.best_val_accuracy = m.accuracy;
      res.best_step = step;
      if (cfg.select_best) {
        best.clear();
        for (const auto& p : opt.params()) best.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
      }
    }
    have_eval = true;
    res.evals.push_back(std::move(r));
    return m.accuracy;
  };

  // Non-finite values anywhere (loss, gradients, softmax inputs, evaluation)
  // end the run as diverged rather than propagating.
  auto guarded = [&](auto&& body) {
    try {
      body();
    } catch (const NumericError& e) {
      res.diverged = true;
      res.failure = e.what();
    }
    return !res.diverged;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::int32_t> targets;
  std::size_t step = 0;
  double lr = 0.0;
  bool stop = false;
  auto eval_and_check = [&](std::size_t epoch) {
    const double acc = do_eval(step, epoch, lr);
    if (cfg.stop_at_accuracy > 0 && acc >= cfg.stop_at_accuracy) stop = true;
  };
  for (std::size_t epoch = 0; step < total && !stop; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < per_epoch && step < total && !stop; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      auto in = make_batch(tr, std::span<const std::size_t>(order.data() + lo, hi - lo), targets);
      lr = schedule_lr(sched, step);
      if (!guarded([&] {
        auto loss = cross_entropy(model.forward(in, true, &rng), std::span<const std::int32_t>(targets));
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw NumericError("non-finite loss at step " + std::to_string(step + 1));
        opt.zero_grad();
        loss.backward();
        opt.step(lr);
        pending.push_back(lv);
        ++step;
        if (cfg.eval_every && step % cfg.eval_every == 0) eval_and_check(epoch);
          }))
        stop = true;
    }
    if (!stop && cfg.epochs && !cfg.eval_every && !guarded([&] { eval_and_check(epoch + 1); })) stop = true;
  }
  res.steps_run = step;
  if (!res.diverged && (res.evals.empty() || res.evals.back().step != step))
    guarded([&] { do_eval(step, step / per_epoch, lr); });
  if (cfg.select_best && !best.empty()) {
    auto params = opt.params();
    for (std::size_t k = 0; k < params.size(); ++k)
      std::copy(best[k].begin(), best[k].end(), params[k].tensor.mutable_data().begin());
  }
  opt.zero_grad();
  return res;
}

}  // namespace

template <typename T>
Metrics evaluate(const Model<T>& model, const ImageDataset& ds, std::size_t batch) {
  return evaluate_impl(model, ds.size(), batch, [&](auto idx, auto& t) { return image_batch(ds, idx, t); });
}

template <typename T>
Metrics evaluate(const Model<T>& model, const SeqDataset& ds, std::size_t batch) {
  return evaluate_impl(model, ds.size(), batch,
                       [&](auto idx, auto& t) { return sequence_batch(model.config(), ds, idx, t); });
}

template <typename T>
RunResult train(Model<T>& model, const ImageDataset& tr, const ImageDataset& va, const TrainConfig& cfg,
                const RunLog* log) {
  return train_impl(model, tr, va, cfg, log,
                    [](const ImageDataset& ds, auto idx, auto& t) { return image_batch(ds, idx, t); });
}

template <typename T>
RunResult train(Model<T>& model, const SeqDataset& tr, const SeqDataset& va, const TrainConfig& cfg,
                const RunLog* log) {
  const ModelConfig mc = model.config();
  return train_impl(model, tr, va, cfg, log,
                    [mc](const SeqDataset& ds, auto idx, auto& t) { return sequence_batch(mc, ds, idx, t); });
}

#define DAT_INSTANTIATE_TRAIN(T)                                                                               \
  template Metrics evaluate(const Model<T>&, const ImageDataset&, std::size_t);                               \
  template Metrics evaluate(const Model<T>&, const SeqDataset&, std::size_t);                                 \
  template RunResult train(Model<T>&, const ImageDataset&, const ImageDataset&, const TrainConfig&,            \
                           const RunLog*);                                                                     \
  template RunResult train(Model<T>&, const SeqDataset&, const SeqDataset&, const TrainConfig&, const RunLog*);

DAT_INSTANTIATE_TRAIN(float)
DAT_INSTANTIATE_TRAIN(double)

}  // namespace dat
