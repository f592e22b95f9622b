#pragma once

// Mini-batch Adam training with per-epoch dev evaluation and best-dev
// checkpointing, plus dataset-level evaluation.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "napg/log.hpp"
#include "napg/model.hpp"

namespace napg {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalResult {
  MetricsReport report;
  std::vector<PredictionRecord> predictions;
};

inline EvalResult evaluate(const Model& model, const std::vector<Example>& examples) {
  EvalResult r;
  r.predictions.reserve(examples.size());
  for (const Example& ex : examples) r.predictions.push_back(model.predict(ex));
  r.report = score_all(examples, r.predictions);
  return r;
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean per example
  double seconds = 0.0;
  std::optional<MetricsReport> dev;
};

inline nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"seconds", e.seconds}};
  if (e.dev) j["dev"] = to_json(*e.dev);
  return j;
}

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;  // 0 = the initial parameters
  std::optional<MetricsReport> best_dev;
  bool stopped_on_budget = false;
  double seconds = 0.0;
};

/// Dev selection key: Prog Acc, then Exe Acc.
inline bool better(const MetricsReport& a, const MetricsReport& b) {
  if (a.prog_acc != b.prog_acc) return a.prog_acc > b.prog_acc;
  return a.exe_acc > b.exe_acc;
}

/// Trains in place. Afterwards the model holds the best-dev parameters (the
/// last epoch's when `dev` is empty). `stop_when` ends training early. With `paths.out_dir` set, writes
/// best.ckpt.json, last.ckpt.json and train_log.jsonl there.
inline TrainResult train_model(Model& model, const std::vector<Example>& train, const std::vector<Example>& dev,
                               const std::function<void(const EpochLog&)>& on_epoch = {},
                               const std::function<bool(const EpochLog&)>& stop_when = {}) {
  using Clock = std::chrono::steady_clock;
  const RunConfig& cfg = model.config();
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  std::vector<ModelInput> inputs;
  inputs.reserve(train.size());
  for (const Example& ex : train) inputs.push_back(model.input(ex));

  const std::string out_dir = cfg.paths.out_dir;
  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_file.open(std::filesystem::path(out_dir) / "train_log.jsonl", std::ios::binary);
  }

  nn::AdamState adam;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<nn::Matrix> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (std::size_t i = 0; i < model.store().size(); ++i) best_params.push_back(model.store()[i].value);
  };
  snapshot();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double epoch_start = elapsed();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      nn::GradBuffer grads;
      std::size_t in_batch = 0;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
        const std::size_t idx = order[k];
        nn::Graph g(true);
        const auto loss = model.loss(g, train[idx], inputs[idx]);
        if (!loss) continue;
        const double v = loss->scalar();
        if (!std::isfinite(v)) {
          std::ostringstream msg;
          msg << "non-finite loss " << v << " on example " << train[idx].id << " (epoch " << epoch << ", step "
              << adam.step << ")";
          throw TrainingError(msg.str());
        }
        g.backward(*loss);
        g.accumulate(grads);
        loss_sum += v;
        ++counted;
        ++in_batch;
      }
      if (in_batch == 0) continue;
      grads.scale(1.0 / static_cast<double>(in_batch));
      nn::adam_step(model.store(), grads, adam, cfg.optimizer);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = counted ? loss_sum / static_cast<double>(counted) : 0.0;
    if (!dev.empty()) {
      log.dev = evaluate(model, dev).report;
      if (!result.best_dev || better(*log.dev, *result.best_dev)) {
        result.best_dev = log.dev;
        result.best_epoch = epoch;
        snapshot();
        if (!out_dir.empty()) model.save((std::filesystem::path(out_dir) / "best.ckpt.json").string(), {{"epoch", epoch}});
      }
    } else {
      result.best_epoch = epoch;
      snapshot();
    }
    log.seconds = elapsed() - epoch_start;
    result.epochs.push_back(log);

    std::ostringstream msg;
    msg << "epoch " << epoch << " loss " << log.train_loss;
    if (log.dev) msg << " dev prog " << log.dev->prog_acc << " exe " << log.dev->exe_acc << " em " << log.dev->em;
    msg << " (" << log.seconds << " s)";
    log::info(msg.str());
    if (log_file) log_file << to_json(log).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(log);
    if (stop_when && stop_when(log)) break;

    if (cfg.max_minutes > 0.0 && elapsed() > cfg.max_minutes * 60.0 && epoch < cfg.epochs) {
      log::warn("training budget of " + std::to_string(cfg.max_minutes) + " minutes reached after epoch " + std::to_string(epoch));
      result.stopped_on_budget = true;
      break;
    }
  }
  if (!out_dir.empty()) model.save((std::filesystem::path(out_dir) / "last.ckpt.json").string(), {{"epoch", result.epochs.size()}});
  for (std::size_t i = 0; i < model.store().size(); ++i) model.store()[i].value = best_params[i];
  result.seconds = elapsed();
  return result;
}

}  // namespace napg
