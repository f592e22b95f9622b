#pragma once

// A complete model (encoder + NAPG head or AR decoder), its checkpoint format,
// prediction records and per-example scoring.

#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "napg/ar_decoder.hpp"
#include "napg/config.hpp"
#include "napg/encoder.hpp"
#include "napg/example.hpp"
#include "napg/fast_decode.hpp"
#include "napg/metrics.hpp"
#include "napg/napg_head.hpp"

namespace napg {

struct PredictionRecord {
  std::string id;
  std::optional<Program> program;
  std::optional<SpanPred> span;  // text positions, end exclusive
  std::string answer;            // rendered answer; empty when nothing executable was produced
  std::string error;
  bool truncated = false;
  std::size_t predicted_steps = 0;
};

inline std::string span_text(const Example& ex, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t p = begin; p < end && p < ex.text_size(); ++p) {
    if (!out.empty()) out += ' ';
    out += ex.text_token(p);
  }
  return out;
}

inline nlohmann::json to_json(const PredictionRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"answer", r.answer}, {"predicted_steps", r.predicted_steps}};
  if (r.program) j["program"] = serialize_program(*r.program);
  if (r.span) j["span"] = {r.span->begin, r.span->end};
  if (!r.error.empty()) j["error"] = r.error;
  if (r.truncated) j["truncated"] = true;
  return j;
}

/// Runs `program` and fills answer/error.
inline void finish_program(PredictionRecord& rec, Program program) {
  rec.predicted_steps = program.size();
  try {
    rec.answer = format_answer(execute(program));
  } catch (const ProgramError& e) {
    rec.error = e.what();
  }
  rec.program = std::move(program);
}

/// The gold annotation dressed as a prediction (upper-bound check for eval).
inline PredictionRecord gold_prediction(const Example& ex) {
  PredictionRecord rec;
  rec.id = ex.id;
  if (const auto* s = std::get_if<SpanGold>(&ex.gold)) {
    rec.span = SpanPred{s->begin, s->end};
    rec.answer = span_text(ex, s->begin, s->end);
  } else {
    finish_program(rec, ex.program());
  }
  return rec;
}

/// Program gold: Exe/Prog compare against the gold program, EM/F1 compare
/// answer strings. Span gold: EM/F1 on the span text, and Exe/Prog count the
/// example as solved iff the span text matches exactly.
inline ExampleScore score_prediction(const Example& ex, const PredictionRecord& pred) {
  ExampleScore s;
  const bool has_answer = pred.program ? pred.error.empty() : pred.span.has_value();
  if (has_answer) {
    s.em = exact_match(pred.answer, ex.answer);
    s.f1 = numeracy_f1(pred.answer, ex.answer);
  }
  if (ex.is_span()) {
    s.exe = s.prog = pred.span.has_value() && s.em;
    return s;
  }
  if (!pred.program) return s;
  const Program gold = ex.program();
  s.prog = prog_acc(*pred.program, gold);
  if (pred.error.empty()) s.exe = exe_acc(execute(*pred.program), execute(gold));
  return s;
}

inline MetricsReport score_all(const std::vector<Example>& examples, const std::vector<PredictionRecord>& preds) {
  if (examples.size() != preds.size()) throw std::invalid_argument("score_all: size mismatch");
  std::vector<ExampleScore> scores;
  std::vector<std::size_t> steps;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].id != preds[i].id) throw std::invalid_argument("score_all: id mismatch at " + examples[i].id);
    scores.push_back(score_prediction(examples[i], preds[i]));
    steps.push_back(examples[i].step_count);
  }
  return aggregate(scores, steps);
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Model {
 public:
  Model(const RunConfig& cfg, Vocab vocab) : cfg_(cfg), vocab_(std::move(vocab)), store_(std::make_unique<nn::ParameterStore>()) {
    cfg_.finalize();
    if (vocab_.n_step_tokens() < cfg_.n_max_steps) throw ConfigError("vocabulary has too few step tokens for n_max_steps");
    std::mt19937_64 rng(cfg_.seed);
    encoder_ = std::make_unique<Encoder>(*store_, cfg_.encoder, vocab_.size(), rng);
    if (cfg_.model == DecoderType::Napg) {
      head_ = std::make_unique<NapgHead>(*store_, cfg_.napg, cfg_.encoder.d_model, rng);
    } else {
      ar_ = std::make_unique<ArDecoder>(*store_, cfg_.ar, cfg_.encoder.d_model, rng);
    }
  }

  const RunConfig& config() const noexcept { return cfg_; }
  const Vocab& vocab() const noexcept { return vocab_; }
  nn::ParameterStore& store() noexcept { return *store_; }
  const nn::ParameterStore& store() const noexcept { return *store_; }
  DecoderType type() const noexcept { return cfg_.model; }

  /// Scalars in the decoder (head or AR), excluding the encoder.
  std::size_t decoder_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < store_->size(); ++i) {
      const auto& p = (*store_)[i];
      if (p.name.rfind("enc.", 0) != 0) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
  }

  ModelInput input(const Example& ex, bool check_gold = true) const {
    return build_input(ex, vocab_, cfg_.input_options(check_gold));
  }

  EncoderOutput encode(nn::Graph& g, const ModelInput& in) const { return encoder_->encode(g, in); }

  /// Training loss for one example, or nothing when the decoder cannot learn
  /// from it (span examples have no AR target sequence).
  std::optional<nn::Var> loss(nn::Graph& g, const Example& ex, const ModelInput& in) const {
    if (head_) {
      const TrainingTargets t = build_targets(ex, in);
      return head_->loss(g, encode(g, in), in, t);
    }
    if (ex.is_span()) return std::nullopt;
    return ar_->teacher_forced_loss(g, encode(g, in), in, program_to_tokens(ex.program(), in));
  }

  /// Decoder-only half of prediction (the part the speed benchmark times).
  PredictionRecord decode(nn::Graph& g, const EncoderOutput& enc, const Example& ex, const ModelInput& in) const {
    PredictionRecord rec;
    rec.id = ex.id;
    if (head_) {
      Prediction p = head_->decode(g, enc, in);
      if (const auto* s = std::get_if<SpanPred>(&p.value)) {
        rec.span = *s;
        rec.answer = span_text(ex, s->begin, s->end);
      } else {
        finish_program(rec, std::get<Program>(std::move(p.value)));
      }
      return rec;
    }
    ArDecodeResult r = ar_->greedy_decode(g, enc, in);
    rec.truncated = r.truncated;
    for (int t : r.tokens) rec.predicted_steps += t < static_cast<int>(kNumOperators);
    if (r.program) {
      finish_program(rec, std::move(*r.program));
    } else {
      rec.error = r.error;
    }
    return rec;
  }

  /// Inference-only decoder over the current weights.
  FastDecoder fast_decoder() const {
    if (head_) return FastDecoder(NapgFastDecoder(*store_, cfg_.napg));
    return FastDecoder(ArFastDecoder(*store_, cfg_.ar));
  }

  /// Prediction record from a fast-path result.
  static PredictionRecord finish(const Example& ex, FastResult r) {
    PredictionRecord rec;
    rec.id = ex.id;
    rec.truncated = r.truncated;
    rec.predicted_steps = r.predicted_steps;
    if (r.span) {
      rec.span = r.span;
      rec.answer = span_text(ex, r.span->begin, r.span->end);
    } else if (r.program) {
      finish_program(rec, std::move(*r.program));
    } else {
      rec.error = std::move(r.error);
    }
    return rec;
  }

  PredictionRecord predict(const Example& ex) const {
    ModelInput in;
    try {
      in = input(ex, false);
    } catch (const InputError& e) {
      PredictionRecord rec;
      rec.id = ex.id;
      rec.error = e.what();
      return rec;
    }
    nn::Graph g(false);
    return decode(g, encode(g, in), ex, in);
  }

  const NapgHead* napg_head() const noexcept { return head_.get(); }
  const ArDecoder* ar_decoder() const noexcept { return ar_.get(); }

  // Checkpoint:
  //   { "format": "napg-checkpoint", "version": 1, "decoder": "napg" | "ar",
  //     "config": <RunConfig>, "vocab": <Vocab>, "parameters": <parameter block>, "meta": {...} }
  nlohmann::json checkpoint_json(const nlohmann::json& meta = nlohmann::json::object()) const {
    return {{"format", "napg-checkpoint"},
            {"version", 1},
            {"decoder", decoder_name(cfg_.model)},
            {"config", to_json(cfg_)},
            {"vocab", vocab_.to_json()},
            {"parameters", nn::parameters_to_json(*store_)},
            {"meta", meta}};
  }

  static Model from_checkpoint_json(const nlohmann::json& j) {
    if (j.value("format", "") != "napg-checkpoint") throw CheckpointError("not a napg checkpoint");
    if (j.value("version", 0) != 1) throw CheckpointError("unsupported checkpoint version");
    const RunConfig cfg = run_config_from_json(j.at("config"));
    if (decoder_name(cfg.model) != j.at("decoder").get<std::string>()) throw CheckpointError("decoder tag disagrees with config");
    Model m(cfg, Vocab::from_json(j.at("vocab")));
    try {
      nn::parameters_from_json(j.at("parameters"), m.store());
    } catch (const std::exception& e) {
      throw CheckpointError(e.what());
    }
    return m;
  }

  void save(const std::string& path, const nlohmann::json& meta = nlohmann::json::object()) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path);
    out << checkpoint_json(meta).dump();
    if (!out) throw CheckpointError("write failed: " + path);
  }

  static Model load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(path + ": " + e.what());
    }
    return from_checkpoint_json(j);
  }

 private:
  RunConfig cfg_;
  Vocab vocab_;
  std::unique_ptr<nn::ParameterStore> store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<NapgHead> head_;
  std::unique_ptr<ArDecoder> ar_;
};

}  // namespace napg
