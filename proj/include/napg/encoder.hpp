#pragma once

// Model input assembly and a small transformer encoder.
//
// Input layout: [CLS], the constant tokens, step-result tokens #0..#(n-1),
// question tokens, sentence tokens. Numbers become a shared [NUM] placeholder
// whose value is kept in ModelInput::number_values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "napg/autodiff.hpp"
#include "napg/example.hpp"
#include "napg/layers.hpp"
#include "napg/program.hpp"

namespace napg {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Vocabulary

inline std::string step_token(std::size_t k) { return "#" + std::to_string(k); }

inline constexpr std::array<std::string_view, 12> kDigitTokens = {
    "<d0>", "<d1>", "<d2>", "<d3>", "<d4>", "<d5>", "<d6>", "<d7>", "<d8>", "<d9>", "<dot>", "<minus>"};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kNum = 2;
  static constexpr int kUnk = 3;
  static constexpr int kFirstConstant = 4;

  /// Reserves specials, constants, and step tokens #0..#(n_step_tokens-1).
  explicit Vocab(std::size_t n_step_tokens) : n_step_tokens_(n_step_tokens) {
    for (const char* s : {"[PAD]", "[CLS]", "[NUM]", "[UNK]"}) add(s);
    for (const auto& c : kConstants) add(std::string(c.name));
    for (std::size_t k = 0; k < n_step_tokens; ++k) add(step_token(k));
    for (auto d : kDigitTokens) add(std::string(d));
  }

  int add(const std::string& token) {
    if (auto it = ids_.find(token); it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t n_step_tokens() const noexcept { return n_step_tokens_; }

  int constant_id(std::size_t i) const { return kFirstConstant + static_cast<int>(i); }
  int step_id(std::size_t k) const { return kFirstConstant + static_cast<int>(kConstants.size() + k); }
  int digit_id(std::size_t d) const { return step_id(n_step_tokens_) + static_cast<int>(d); }

  /// Word vocabulary from training examples; numbers never enter it.
  static Vocab build(const std::vector<Example>& examples, std::size_t n_step_tokens) {
    Vocab v(n_step_tokens);
    for (const auto& ex : examples) {
      for (std::size_t pos = 0; pos < ex.text_size(); ++pos) {
        if (!ex.number_annotations.count(pos)) v.add(ex.text_token(pos));
      }
    }
    return v;
  }

  nlohmann::json to_json() const {
    nlohmann::json tokens = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) tokens[tokens_[i]] = i;
    return {{"n_step_tokens", n_step_tokens_}, {"tokens", std::move(tokens)}};
  }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v(j.at("n_step_tokens").get<std::size_t>());
    std::vector<std::pair<int, std::string>> entries;
    for (const auto& [tok, id] : j.at("tokens").items()) entries.emplace_back(id.get<int>(), tok);
    std::sort(entries.begin(), entries.end());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first != static_cast<int>(i)) throw std::runtime_error("vocabulary ids are not dense");
      if (i < v.size()) {
        if (v.token(static_cast<int>(i)) != entries[i].second) throw std::runtime_error("vocabulary reserved ids differ");
      } else {
        v.add(entries[i].second);
      }
    }
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::size_t n_step_tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

// ---------------------------------------------------------------------------
// Model input

enum class SlotKind : std::uint8_t { Cls, Constant, StepToken, Word, Number, Digit };

struct ModelInput {
  std::vector<int> token_ids;
  std::vector<bool> candidate_mask;
  std::map<std::size_t, double> number_values;  // input position -> value
  std::vector<SlotKind> kinds;
  std::vector<std::size_t> slot_index;           // constant id, step k, or text position
  std::vector<std::size_t> text_to_input;        // text position -> input position
  std::vector<std::string> surface;              // surface form per input position
  std::vector<int> segments;                     // 0 special slots, 1 question, 2 sentences
  std::size_t n_steps = 0;
  std::size_t text_begin = 0;

  std::size_t size() const noexcept { return token_ids.size(); }
  static constexpr std::size_t constant_position(std::size_t i) { return 1 + i; }
  static constexpr std::size_t step_position(std::size_t k) { return 1 + kConstants.size() + k; }

  /// Candidates legal for step i: step tokens #k with k >= i are removed.
  std::vector<bool> step_candidates(std::size_t i) const {
    std::vector<bool> m = candidate_mask;
    for (std::size_t k = i; k < n_steps; ++k) m[step_position(k)] = false;
    return m;
  }

  std::vector<std::size_t> candidate_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < candidate_mask.size(); ++p) {
      if (candidate_mask[p]) out.push_back(p);
    }
    return out;
  }

  Operand operand_at(std::size_t pos) const {
    switch (kinds.at(pos)) {
      case SlotKind::Constant: return Constant{slot_index[pos]};
      case SlotKind::StepToken: return StepRef{slot_index[pos]};
      case SlotKind::Number: return NumberLiteral{number_values.at(pos)};
      default: throw InputError("position " + std::to_string(pos) + " is not an operand slot");
    }
  }

  /// Candidate position of an operand: constants and step refs have fixed
  /// slots, literals align to the first number with an equal value.
  std::optional<std::size_t> position_of(const Operand& operand) const {
    if (const auto* c = std::get_if<Constant>(&operand)) return constant_position(c->id);
    if (const auto* r = std::get_if<StepRef>(&operand)) {
      if (r->index >= n_steps) return std::nullopt;
      return step_position(r->index);
    }
    const double v = std::get<NumberLiteral>(operand).value;
    for (const auto& [pos, value] : number_values) {
      if (value == v) return pos;
    }
    return std::nullopt;
  }
};

struct InputOptions {
  std::size_t n_max_steps = 5;
  std::size_t max_len = 256;
  bool digit_tokens = false;  // append digit tokens after each [NUM] (ablation)
  bool check_gold = true;     // require every gold operand to align; off for prediction-only inputs
};

namespace detail {
inline std::vector<std::size_t> digit_token_indices(double value) {
  std::vector<std::size_t> out;
  for (char c : format_literal(value)) {
    if (c >= '0' && c <= '9') out.push_back(static_cast<std::size_t>(c - '0'));
    if (c == '.') out.push_back(10);
    if (c == '-') out.push_back(11);
  }
  return out;
}
}  // namespace detail

inline ModelInput build_input(const Example& ex, const Vocab& vocab, const InputOptions& opt) {
  if (opt.n_max_steps > vocab.n_step_tokens()) {
    throw InputError("vocabulary has " + std::to_string(vocab.n_step_tokens()) + " step tokens, need " +
                     std::to_string(opt.n_max_steps));
  }
  ModelInput in;
  in.n_steps = opt.n_max_steps;
  int segment = 0;
  auto push = [&](int id, SlotKind kind, std::size_t slot, bool candidate, std::string surface) {
    in.segments.push_back(segment);
    in.token_ids.push_back(id);
    in.kinds.push_back(kind);
    in.slot_index.push_back(slot);
    in.candidate_mask.push_back(candidate);
    in.surface.push_back(std::move(surface));
  };
  push(Vocab::kCls, SlotKind::Cls, 0, false, "[CLS]");
  for (std::size_t i = 0; i < kConstants.size(); ++i) {
    push(vocab.constant_id(i), SlotKind::Constant, i, true, std::string(kConstants[i].name));
  }
  for (std::size_t k = 0; k < opt.n_max_steps; ++k) push(vocab.step_id(k), SlotKind::StepToken, k, true, step_token(k));
  in.text_begin = in.size();
  in.text_to_input.resize(ex.text_size());
  for (std::size_t pos = 0; pos < ex.text_size(); ++pos) {
    in.text_to_input[pos] = in.size();
    segment = pos < ex.question_tokens.size() ? 1 : 2;
    const std::string& tok = ex.text_token(pos);
    if (auto it = ex.number_annotations.find(pos); it != ex.number_annotations.end()) {
      in.number_values[in.size()] = it->second;
      push(Vocab::kNum, SlotKind::Number, pos, true, tok);
      if (opt.digit_tokens) {
        for (std::size_t d : detail::digit_token_indices(it->second)) push(vocab.digit_id(d), SlotKind::Digit, pos, false, "");
      }
    } else {
      push(vocab.id(tok), SlotKind::Word, pos, false, tok);
    }
  }
  if (in.size() > opt.max_len) {
    throw InputError(ex.id + ": input length " + std::to_string(in.size()) + " exceeds max_len " +
                     std::to_string(opt.max_len));
  }
  if (opt.check_gold && !ex.is_span()) {
    const Program program = ex.program();
    for (const auto& step : program.steps()) {
      for (const Operand* o : {&step.first, &step.second}) {
        if (!in.position_of(*o)) throw InputError(ex.id + ": operand " + format_operand(*o) + " has no candidate position");
      }
    }
  }
  return in;
}

// ---------------------------------------------------------------------------
// Transformer encoder

struct EncoderConfig {
  int d_model = 64;
  int layers = 3;
  int heads = 4;
  int ffn_dim = 128;
  std::size_t max_len = 256;
  bool digit_tokens = false;
  int relative_window = 8;  // learned per-head attention bias for offsets up to this; 0 = off
};

struct EncoderOutput {
  nn::Var h_o;  // T x d
  nn::Var cls;  // 1 x d
};

inline nn::Matrix sinusoidal_positions(std::size_t max_len, int d) {
  nn::Matrix pe(static_cast<Eigen::Index>(max_len), d);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      const double angle = static_cast<double>(pos) * rate;
      pe(static_cast<Eigen::Index>(pos), i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

/// Relative-bias start point: head h decays linearly with distance at slope 4^-h.
inline nn::Matrix locality_init(int heads, int window) {
  nn::Matrix m(heads, 2 * window + 1);
  for (int h = 0; h < heads; ++h)
    for (int o = -window; o <= window; ++o) m(h, o + window) = -std::abs(o) * std::pow(4.0, -h);
  return m;
}

class Encoder {
 public:
  Encoder(nn::ParameterStore& store, const EncoderConfig& cfg, std::size_t vocab_size, std::mt19937_64& rng)
      : cfg_(cfg), positions_(sinusoidal_positions(cfg.max_len, cfg.d_model)) {
    if (cfg.d_model % cfg.heads != 0) throw std::invalid_argument("d_model must be divisible by heads");
    const Eigen::Index d = cfg.d_model;
    embed_ = &store.add("enc.embed", nn::normal_init(static_cast<Eigen::Index>(vocab_size), d, 0.1, rng));
    segment_ = &store.add("enc.segment", nn::normal_init(3, d, 0.1, rng));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l);
      Layer layer;
      layer.ln1_g = &store.add(p + ".ln1.g", nn::Matrix::Ones(1, d));
      layer.ln1_b = &store.add(p + ".ln1.b", nn::Matrix::Zero(1, d));
      layer.qkv = nn::Linear::create(store, p + ".qkv", d, 3 * d, rng);
      layer.out = nn::Linear::create(store, p + ".attn_out", d, d, rng);
      if (cfg.relative_window > 0) layer.rel = &store.add(p + ".rel", locality_init(cfg.heads, cfg.relative_window));
      layer.ln2_g = &store.add(p + ".ln2.g", nn::Matrix::Ones(1, d));
      layer.ln2_b = &store.add(p + ".ln2.b", nn::Matrix::Zero(1, d));
      layer.ffn = nn::FfnParams::create(store, p + ".ffn", d, cfg.ffn_dim, d, rng);
      layers_.push_back(layer);
    }
    lnf_g_ = &store.add("enc.lnf.g", nn::Matrix::Ones(1, d));
    lnf_b_ = &store.add("enc.lnf.b", nn::Matrix::Zero(1, d));
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(embed_->value.rows()); }

  EncoderOutput encode(nn::Graph& g, const ModelInput& input) const {
    const auto T = static_cast<Eigen::Index>(input.size());
    if (input.size() > cfg_.max_len) throw nn::ShapeError("encode: input longer than max_len");
    std::vector<int> ids = input.token_ids;
    for (int id : ids) {
      if (id < 0 || id >= embed_->value.rows()) throw nn::ShapeError("encode: token id outside vocabulary");
    }
    // Embeddings are scaled by sqrt(d) so token identity is not drowned out by
    // the unit-amplitude position signal.
    nn::Var x = nn::add(nn::embed_lookup(g, *embed_, std::move(ids)), nn::embed_lookup(g, *segment_, input.segments));
    x = nn::scale(x, std::sqrt(static_cast<double>(cfg_.d_model)));
    x = nn::add(x, g.constant(positions_.topRows(T)));
    for (const Layer& layer : layers_) x = encoder_layer(g, x, layer);
    nn::Var h = nn::layer_norm(x, g.param(*lnf_g_), g.param(*lnf_b_));
    return {h, nn::select_rows(h, {0})};
  }

  /// One pre-LN block, exposed for gradient checks.
  nn::Var layer_forward(nn::Graph& g, const nn::Var& x, std::size_t layer) const {
    return encoder_layer(g, x, layers_.at(layer));
  }

 private:
  struct Layer {
    nn::Parameter* ln1_g = nullptr;
    nn::Parameter* ln1_b = nullptr;
    nn::Linear qkv;
    nn::Linear out;
    nn::Parameter* rel = nullptr;
    nn::Parameter* ln2_g = nullptr;
    nn::Parameter* ln2_b = nullptr;
    nn::FfnParams ffn;
  };

  nn::Var encoder_layer(nn::Graph& g, const nn::Var& x, const Layer& layer) const {
    const Eigen::Index d = cfg_.d_model;
    const Eigen::Index dk = d / cfg_.heads;
    nn::Var a = nn::layer_norm(x, g.param(*layer.ln1_g), g.param(*layer.ln1_b));
    nn::Var qkv = layer.qkv(g, a);
    std::vector<nn::Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.heads));
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    for (Eigen::Index h = 0; h < cfg_.heads; ++h) {
      nn::Var q = nn::slice_cols(qkv, h * dk, dk);
      nn::Var k = nn::slice_cols(qkv, d + h * dk, dk);
      nn::Var v = nn::slice_cols(qkv, 2 * d + h * dk, dk);
      nn::Var scores = nn::scale(nn::matmul_nt(q, k), inv);
      if (layer.rel) scores = nn::add_relative_bias(scores, nn::select_rows(g.param(*layer.rel), {static_cast<int>(h)}));
      nn::Var att = nn::softmax_rows(scores);
      heads.push_back(nn::matmul(att, v));
    }
    nn::Var x1 = nn::add(x, layer.out(g, nn::concat_cols(heads)));
    nn::Var b = nn::layer_norm(x1, g.param(*layer.ln2_g), g.param(*layer.ln2_b));
    return nn::add(x1, nn::ffn_forward(g, b, layer.ffn));
  }

  EncoderConfig cfg_;
  nn::Matrix positions_;
  nn::Parameter* embed_ = nullptr;
  nn::Parameter* segment_ = nullptr;
  std::vector<Layer> layers_;
  nn::Parameter* lnf_g_ = nullptr;
  nn::Parameter* lnf_b_ = nullptr;
};

}  // namespace napg
