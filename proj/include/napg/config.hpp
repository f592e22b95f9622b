#pragma once

// Run configuration: model choice, encoder and decoder sizes, loss weights,
// optimizer, schedule, seed and data paths. JSON in, JSON out.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "napg/ar_decoder.hpp"
#include "napg/encoder.hpp"
#include "napg/layers.hpp"
#include "napg/napg_head.hpp"

namespace napg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DecoderType { Napg, Ar };

inline std::string decoder_name(DecoderType t) { return t == DecoderType::Napg ? "napg" : "ar"; }

inline DecoderType decoder_from_name(const std::string& s) {
  if (s == "napg") return DecoderType::Napg;
  if (s == "ar") return DecoderType::Ar;
  throw ConfigError("model must be \"napg\" or \"ar\", got \"" + s + "\"");
}

struct RunPaths {
  std::string train;
  std::string dev;
  std::string out_dir;  // checkpoints and the training log; empty keeps everything in memory
};

struct RunConfig {
  DecoderType model = DecoderType::Napg;
  std::size_t n_max_steps = 5;
  EncoderConfig encoder;
  NapgConfig napg;  // n_max_steps is taken from the top level
  ArConfig ar;      // likewise
  nn::AdamHyper optimizer{1e-3, 0.9, 0.999, 1e-8, 1.0};
  int epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  double max_minutes = 0.0;  // wall-clock budget for training; 0 = none
  RunPaths paths;

  /// Copies shared fields into the sub-configs and checks ranges.
  void finalize() {
    if (n_max_steps < 1) throw ConfigError("n_max_steps must be at least 1");
    if (encoder.d_model < 1 || encoder.layers < 0 || encoder.heads < 1 || encoder.d_model % encoder.heads != 0) {
      throw ConfigError("encoder.d_model must be a positive multiple of encoder.heads");
    }
    if (encoder.ffn_dim < 1 || napg.hidden < 1) throw ConfigError("hidden sizes must be positive");
    const auto& l = napg.lambda;
    if (l.t < 0 || l.length < 0 || l.e < 0 || l.op < 0 || l.order < 0) throw ConfigError("loss weights must be non-negative");
    if (encoder.relative_window < 0) throw ConfigError("encoder.relative_window must be non-negative");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    napg.n_max_steps = n_max_steps;
    ar.n_max_steps = n_max_steps;
  }

  InputOptions input_options(bool check_gold = true) const {
    InputOptions o;
    o.n_max_steps = n_max_steps;
    o.max_len = encoder.max_len;
    o.digit_tokens = encoder.digit_tokens;
    o.check_gold = check_gold;
    return o;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& l = c.napg.lambda;
  return {
      {"model", decoder_name(c.model)},
      {"n_max_steps", c.n_max_steps},
      {"encoder",
       {{"d_model", c.encoder.d_model},
        {"layers", c.encoder.layers},
        {"heads", c.encoder.heads},
        {"ffn_dim", c.encoder.ffn_dim},
        {"max_len", c.encoder.max_len},
        {"digit_tokens", c.encoder.digit_tokens},
        {"relative_window", c.encoder.relative_window}}},
      {"napg",
       {{"hidden", c.napg.hidden},
        {"pooling", c.napg.pooling == OpPooling::Selected ? "selected" : "all_rows"},
        {"span_contiguous", c.napg.span_contiguous},
        {"lambda", {{"t", l.t}, {"length", l.length}, {"e", l.e}, {"op", l.op}, {"order", l.order}}}}},
      {"ar", {{"grammar_mask", c.ar.grammar_mask}, {"max_tokens", c.ar.max_tokens}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"max_grad_norm", c.optimizer.max_grad_norm}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"max_minutes", c.max_minutes},
      {"paths", {{"train", c.paths.train}, {"dev", c.paths.dev}, {"out_dir", c.paths.out_dir}}},
  };
}

namespace config_detail {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* allowed : keys) ok = ok || k == allowed;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace config_detail

/// Missing keys keep defaults; unknown keys are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using config_detail::only_keys;
  using config_detail::read;
  RunConfig c;
  only_keys(j, {"model", "n_max_steps", "encoder", "napg", "ar", "optimizer", "epochs", "batch_size", "seed", "max_minutes", "paths", "name"},
            "config");
  if (j.contains("model")) c.model = decoder_from_name(j.at("model").get<std::string>());
  read(j, "n_max_steps", c.n_max_steps);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    only_keys(e, {"d_model", "layers", "heads", "ffn_dim", "max_len", "digit_tokens", "relative_window"}, "encoder");
    read(e, "d_model", c.encoder.d_model);
    read(e, "layers", c.encoder.layers);
    read(e, "heads", c.encoder.heads);
    read(e, "ffn_dim", c.encoder.ffn_dim);
    read(e, "max_len", c.encoder.max_len);
    read(e, "digit_tokens", c.encoder.digit_tokens);
    read(e, "relative_window", c.encoder.relative_window);
  }
  if (j.contains("napg")) {
    const auto& h = j.at("napg");
    only_keys(h, {"hidden", "pooling", "span_contiguous", "lambda"}, "napg");
    read(h, "hidden", c.napg.hidden);
    read(h, "span_contiguous", c.napg.span_contiguous);
    if (h.contains("pooling")) {
      const auto p = h.at("pooling").get<std::string>();
      if (p == "selected") {
        c.napg.pooling = OpPooling::Selected;
      } else if (p == "all_rows") {
        c.napg.pooling = OpPooling::AllRows;
      } else {
        throw ConfigError("napg.pooling must be \"selected\" or \"all_rows\"");
      }
    }
    if (h.contains("lambda")) {
      const auto& l = h.at("lambda");
      only_keys(l, {"t", "length", "e", "op", "order"}, "napg.lambda");
      read(l, "t", c.napg.lambda.t);
      read(l, "length", c.napg.lambda.length);
      read(l, "e", c.napg.lambda.e);
      read(l, "op", c.napg.lambda.op);
      read(l, "order", c.napg.lambda.order);
    }
  }
  if (j.contains("ar")) {
    const auto& a = j.at("ar");
    only_keys(a, {"grammar_mask", "max_tokens"}, "ar");
    read(a, "grammar_mask", c.ar.grammar_mask);
    read(a, "max_tokens", c.ar.max_tokens);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    only_keys(o, {"lr", "beta1", "beta2", "eps", "max_grad_norm"}, "optimizer");
    read(o, "lr", c.optimizer.lr);
    read(o, "beta1", c.optimizer.beta1);
    read(o, "beta2", c.optimizer.beta2);
    read(o, "eps", c.optimizer.eps);
    read(o, "max_grad_norm", c.optimizer.max_grad_norm);
  }
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "max_minutes", c.max_minutes);
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    only_keys(p, {"train", "dev", "out_dir"}, "paths");
    read(p, "train", c.paths.train);
    read(p, "dev", c.paths.dev);
    read(p, "out_dir", c.paths.out_dir);
  }
  c.finalize();
  return c;
}

}  // namespace napg
