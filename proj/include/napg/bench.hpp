#pragma once

// Decode-only latency benchmark on the inference paths. Encoder outputs are
// computed up front; each timed call covers one example's decoder pass, from
// encoder output to a program (or span). Executing the program is not timed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "napg/model.hpp"

namespace napg {

struct BenchOptions {
  std::size_t repeats = 3;
  std::size_t warmup = 20;        // untimed decodes before measuring
  std::size_t max_examples = 0;   // 0 = all
};

struct BenchRow {
  std::size_t length = 0;  // predicted program length (0 = span)
  std::size_t count = 0;   // examples in this bucket
  double mean_ms = 0.0;    // per-example decode time
};

struct BenchReport {
  std::string decoder;
  std::size_t n = 0;
  std::size_t examples = 0;
  std::size_t repeats = 0;
  std::size_t decoder_parameters = 0;
  double total_seconds = 0.0;        // mean over repeats of one full pass
  double total_seconds_stddev = 0.0;  // across repeats
  double examples_per_second = 0.0;
  std::vector<BenchRow> by_length;
};

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.by_length) rows.push_back({{"length", row.length}, {"count", row.count}, {"mean_ms", row.mean_ms}});
  return {{"decoder", r.decoder},
          {"n", r.n},
          {"examples", r.examples},
          {"repeats", r.repeats},
          {"decoder_parameters", r.decoder_parameters},
          {"total_seconds", r.total_seconds},
          {"total_seconds_stddev", r.total_seconds_stddev},
          {"examples_per_second", r.examples_per_second},
          {"by_length", rows}};
}

inline BenchReport bench_decoder(const Model& model, const std::vector<Example>& data, const BenchOptions& opt) {
  using Clock = std::chrono::steady_clock;
  if (opt.repeats < 1) throw std::invalid_argument("repeats must be at least 1");
  std::vector<const Example*> examples;
  std::vector<ModelInput> inputs;
  for (const Example& ex : data) {
    if (opt.max_examples && examples.size() == opt.max_examples) break;
    try {
      inputs.push_back(model.input(ex, false));
      examples.push_back(&ex);
    } catch (const InputError&) {
      // skipped: does not fit the model
    }
  }
  if (examples.empty()) throw std::invalid_argument("bench: no usable examples");

  const FastDecoder decoder = model.fast_decoder();
  std::vector<nn::Matrix> h_o, cls;
  for (const ModelInput& in : inputs) {
    nn::Graph g(false);
    const EncoderOutput enc = model.encode(g, in);
    h_o.push_back(enc.h_o.value());
    cls.push_back(enc.cls.value());
  }

  auto run_one = [&](std::size_t i, bool timed, std::size_t* steps) {
    const auto t0 = Clock::now();
    FastResult r = decoder.decode(h_o[i], cls[i], inputs[i]);
    const auto t1 = Clock::now();
    if (steps) *steps = r.span ? 0 : Model::finish(*examples[i], std::move(r)).predicted_steps;
    return timed ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
  };

  for (std::size_t w = 0; w < opt.warmup; ++w) run_one(w % examples.size(), false, nullptr);

  std::vector<double> per_example(examples.size(), 0.0);
  std::vector<std::size_t> length(examples.size(), 0);
  std::vector<double> pass_totals;
  for (std::size_t r = 0; r < opt.repeats; ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const double s = run_one(i, true, &length[i]);
      per_example[i] += s;
      total += s;
    }
    pass_totals.push_back(total);
  }

  BenchReport rep;
  rep.decoder = decoder_name(model.type());
  rep.n = model.config().n_max_steps;
  rep.examples = examples.size();
  rep.repeats = opt.repeats;
  rep.decoder_parameters = model.decoder_parameter_count();
  double mean = 0.0;
  for (double t : pass_totals) mean += t;
  mean /= static_cast<double>(pass_totals.size());
  double var = 0.0;
  for (double t : pass_totals) var += (t - mean) * (t - mean);
  rep.total_seconds = mean;
  rep.total_seconds_stddev = pass_totals.size() > 1 ? std::sqrt(var / static_cast<double>(pass_totals.size() - 1)) : 0.0;
  rep.examples_per_second = static_cast<double>(examples.size()) / mean;

  std::map<std::size_t, std::pair<std::size_t, double>> buckets;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto& b = buckets[length[i]];
    ++b.first;
    b.second += per_example[i] / static_cast<double>(opt.repeats);
  }
  for (const auto& [len, b] : buckets) rep.by_length.push_back({len, b.first, 1e3 * b.second / static_cast<double>(b.first)});
  return rep;
}

/// AR-over-NAPG ratio of mean per-example decode time.
inline double speedup(const BenchReport& napg_report, const BenchReport& ar_report) {
  return (ar_report.total_seconds / static_cast<double>(ar_report.examples)) /
         (napg_report.total_seconds / static_cast<double>(napg_report.examples));
}

}  // namespace napg
