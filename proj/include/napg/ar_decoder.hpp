#pragma once

// Autoregressive baseline: an LSTM decoder that emits one program token per
// step (operator, "(", operand, ",", operand, ")", ..., EOF), scoring fixed
// tokens and input positions against a shared key matrix.

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "napg/autodiff.hpp"
#include "napg/encoder.hpp"
#include "napg/layers.hpp"
#include "napg/program.hpp"

namespace napg {

/// Output token ids: 0..5 operators, then structural tokens, then input positions.
namespace ar_tokens {
inline constexpr int kOpen = 6;
inline constexpr int kClose = 7;
inline constexpr int kComma = 8;
inline constexpr int kEof = 9;
inline constexpr int kFixed = 10;
inline constexpr int kGo = 10;  // input-only start symbol
inline constexpr int position(std::size_t pos) { return kFixed + static_cast<int>(pos); }
inline constexpr bool is_position(int tok) { return tok >= kFixed; }
inline constexpr std::size_t position_of(int tok) { return static_cast<std::size_t>(tok - kFixed); }
}  // namespace ar_tokens

inline std::string ar_token_name(int tok, const ModelInput& input) {
  using namespace ar_tokens;
  if (tok >= 0 && tok < static_cast<int>(kNumOperators)) return std::string(operator_name(kAllOperators[static_cast<std::size_t>(tok)]));
  switch (tok) {
    case kOpen: return "(";
    case kClose: return ")";
    case kComma: return ",";
    case kEof: return "EOF";
    default: break;
  }
  const std::size_t pos = position_of(tok);
  return pos < input.size() ? input.surface[pos] : "<pos " + std::to_string(pos) + ">";
}

/// Gold decoder sequence of a program, terminated by EOF.
inline std::vector<int> program_to_tokens(const Program& program, const ModelInput& input) {
  using namespace ar_tokens;
  std::vector<int> out;
  out.reserve(program.size() * 6 + 1);
  for (const auto& step : program.steps()) {
    out.push_back(static_cast<int>(operator_index(step.op)));
    out.push_back(kOpen);
    for (const Operand* o : {&step.first, &step.second}) {
      const auto pos = input.position_of(*o);
      if (!pos) throw InputError("operand " + format_operand(*o) + " has no candidate position");
      out.push_back(position(*pos));
      out.push_back(o == &step.first ? kComma : kClose);
    }
  }
  out.push_back(kEof);
  return out;
}

/// Parses a decoder sequence (EOF optional at the end). Throws ProgramError on malformed input.
inline Program tokens_to_program(const std::vector<int>& tokens, const ModelInput& input) {
  using namespace ar_tokens;
  std::vector<ProgramStep> steps;
  std::size_t i = 0;
  auto fail = [&](const std::string& why) -> ProgramError {
    return ProgramError(ProgramError::Kind::Syntax, i, why);
  };
  auto expect = [&](int tok, const char* what) {
    if (i >= tokens.size() || tokens[i] != tok) throw fail(std::string("expected ") + what);
    ++i;
  };
  auto operand = [&]() -> Operand {
    if (i >= tokens.size() || !is_position(tokens[i])) throw fail("expected an operand");
    const std::size_t pos = position_of(tokens[i]);
    if (pos >= input.size() || !input.candidate_mask[pos]) throw fail("operand position is not a candidate");
    ++i;
    return input.operand_at(pos);
  };
  while (i < tokens.size() && tokens[i] != kEof) {
    if (tokens[i] < 0 || tokens[i] >= static_cast<int>(kNumOperators)) throw fail("expected an operator");
    const Operator op = kAllOperators[static_cast<std::size_t>(tokens[i++])];
    expect(kOpen, "'('");
    Operand a = operand();
    expect(kComma, "','");
    Operand b = operand();
    expect(kClose, "')'");
    steps.push_back({op, std::move(a), std::move(b)});
  }
  if (i + 1 < tokens.size()) throw fail("tokens after EOF");
  if (steps.empty()) throw ProgramError(ProgramError::Kind::Empty, 0, "no steps decoded");
  return Program(std::move(steps));
}

/// Structural grammar: op "(" operand "," operand ")" ... EOF.
class ArGrammar {
 public:
  enum class Phase { Op, Open, First, Comma, Second, Close, Done };

  explicit ArGrammar(std::size_t n_max_steps) : n_(n_max_steps) {}

  Phase phase() const noexcept { return phase_; }
  std::size_t step() const noexcept { return step_; }

  /// Legal next tokens over fixed tokens + `input.size()` positions.
  std::vector<bool> allowed(const ModelInput& input) const {
    using namespace ar_tokens;
    std::vector<bool> m(static_cast<std::size_t>(kFixed) + input.size(), false);
    switch (phase_) {
      case Phase::Op:
        if (step_ > 0) m[kEof] = true;
        if (step_ < n_ && !after_greater_) {
          for (std::size_t o = 0; o < kNumOperators; ++o) m[o] = true;
        }
        break;
      case Phase::Open: m[kOpen] = true; break;
      case Phase::Comma: m[kComma] = true; break;
      case Phase::Close: m[kClose] = true; break;
      case Phase::First:
      case Phase::Second: {
        const auto cand = input.step_candidates(step_);
        for (std::size_t p = 0; p < cand.size(); ++p) m[static_cast<std::size_t>(kFixed) + p] = cand[p];
        break;
      }
      case Phase::Done: break;
    }
    return m;
  }

  void advance(int tok) {
    using namespace ar_tokens;
    switch (phase_) {
      case Phase::Op:
        if (tok == kEof) {
          phase_ = Phase::Done;
        } else {
          after_greater_ = tok == static_cast<int>(operator_index(Operator::Greater));
          phase_ = Phase::Open;
        }
        break;
      case Phase::Open: phase_ = Phase::First; break;
      case Phase::First: phase_ = Phase::Comma; break;
      case Phase::Comma: phase_ = Phase::Second; break;
      case Phase::Second: phase_ = Phase::Close; break;
      case Phase::Close:
        ++step_;
        phase_ = Phase::Op;
        break;
      case Phase::Done: break;
    }
  }

 private:
  std::size_t n_;
  Phase phase_ = Phase::Op;
  std::size_t step_ = 0;
  bool after_greater_ = false;
};

struct ArConfig {
  std::size_t n_max_steps = 5;
  bool grammar_mask = true;
  std::size_t max_tokens = 0;  // 0 = 6 * n_max_steps + 1

  std::size_t token_limit() const { return max_tokens ? max_tokens : 6 * n_max_steps + 1; }
};

struct ArState {
  nn::Var h;  // 1 x d
  nn::Var c;  // 1 x d
};

/// Per-example decoder memory: encoder states plus the key matrix over all output tokens.
struct ArMemory {
  nn::Var h_o;   // T x d
  nn::Var keys;  // (kFixed + T) x d
};

struct ArDecodeResult {
  std::vector<int> tokens;  // without the start symbol; includes EOF when reached
  bool truncated = false;
  std::optional<Program> program;
  std::string error;  // parse failure when program is empty
};

class ArDecoder {
 public:
  ArDecoder(nn::ParameterStore& store, const ArConfig& cfg, int d_model, std::mt19937_64& rng) : cfg_(cfg), d_(d_model) {
    const Eigen::Index d = d_model;
    embed_ = &store.add("ar.embed", nn::normal_init(ar_tokens::kFixed + 1, d, 0.1, rng));
    fixed_keys_ = &store.add("ar.fixed_keys", nn::normal_init(ar_tokens::kFixed, d, 0.1, rng));
    init_ = nn::Linear::create(store, "ar.init", d, d, rng);
    lstm_ = nn::Linear::create(store, "ar.lstm", 2 * d, 4 * d, rng);
    key_ = &store.add("ar.key.w", nn::glorot_uniform(d, d, rng));
    combine_ = nn::Linear::create(store, "ar.combine", 2 * d, d, rng);
  }

  const ArConfig& config() const noexcept { return cfg_; }

  ArMemory memory(nn::Graph& g, const EncoderOutput& enc) const {
    const std::array<nn::Var, 2> parts = {g.param(*fixed_keys_), nn::matmul(enc.h_o, g.param(*key_))};
    return {enc.h_o, nn::concat_rows(parts)};
  }

  ArState initial_state(nn::Graph& g, const EncoderOutput& enc) const {
    return {nn::tanh(init_(g, enc.cls)), g.constant(nn::Matrix::Zero(1, d_))};
  }

  /// One decoder step: feeds `prev`, returns log-probabilities over all output
  /// tokens (masked entries are -inf) and updates `state`.
  nn::Var step(nn::Graph& g, ArState& state, int prev, const ArMemory& mem, const std::vector<bool>* mask) const {
    nn::Var x = ar_tokens::is_position(prev) && prev != ar_tokens::kGo
                    ? nn::select_rows(mem.h_o, {prev - ar_tokens::kFixed})
                    : nn::embed_lookup(g, *embed_, {prev});
    const std::array<nn::Var, 2> xin = {x, state.h};
    nn::Var gates = lstm_(g, nn::concat_cols(xin));
    const Eigen::Index d = d_;
    nn::Var i = nn::sigmoid(nn::slice_cols(gates, 0, d));
    nn::Var f = nn::sigmoid(nn::slice_cols(gates, d, d));
    nn::Var c_hat = nn::tanh(nn::slice_cols(gates, 2 * d, d));
    nn::Var o = nn::sigmoid(nn::slice_cols(gates, 3 * d, d));
    state.c = nn::add(nn::mul(f, state.c), nn::mul(i, c_hat));
    state.h = nn::mul(o, nn::tanh(state.c));
    nn::Var att = nn::softmax_rows(nn::matmul_nt(state.h, mem.h_o));
    nn::Var ctx = nn::matmul(att, mem.h_o);
    const std::array<nn::Var, 2> hc = {state.h, ctx};
    nn::Var combined = nn::tanh(combine_(g, nn::concat_cols(hc)));
    return nn::log_softmax_rows(nn::matmul_nt(combined, mem.keys), mask);
  }

  /// Output-vocabulary mask: grammar mask when enabled, otherwise fixed tokens
  /// plus candidate positions.
  std::vector<bool> mask_for(const ArGrammar& grammar, const ModelInput& input) const {
    if (cfg_.grammar_mask) return grammar.allowed(input);
    std::vector<bool> m(static_cast<std::size_t>(ar_tokens::kFixed) + input.size(), false);
    for (int t = 0; t < ar_tokens::kFixed; ++t) m[static_cast<std::size_t>(t)] = true;
    for (std::size_t p = 0; p < input.size(); ++p) m[static_cast<std::size_t>(ar_tokens::kFixed) + p] = input.candidate_mask[p];
    return m;
  }

  /// Sum of per-token NLL with the gold prefix fed at every step.
  nn::Var teacher_forced_loss(nn::Graph& g, const EncoderOutput& enc, const ModelInput& input,
                              const std::vector<int>& gold) const {
    if (gold.empty()) throw std::invalid_argument("empty gold token sequence");
    const int vocab = ar_tokens::kFixed + static_cast<int>(input.size());
    const ArMemory mem = memory(g, enc);
    ArState state = initial_state(g, enc);
    ArGrammar grammar(cfg_.n_max_steps);
    std::vector<nn::Var> terms;
    terms.reserve(gold.size());
    int prev = ar_tokens::kGo;
    for (int tok : gold) {
      if (tok < 0 || tok >= vocab) throw InputError("gold token " + std::to_string(tok) + " outside the output vocabulary");
      const auto mask = mask_for(grammar, input);
      if (!mask[static_cast<std::size_t>(tok)]) throw InputError("gold token '" + ar_token_name(tok, input) + "' is masked out");
      terms.push_back(nn::nll_loss(step(g, state, prev, mem, &mask), tok));
      grammar.advance(tok);
      prev = tok;
    }
    return nn::weighted_sum(terms, std::vector<double>(terms.size(), 1.0));
  }

  /// Greedy decoding, feeding back the argmax token until EOF or the token limit.
  ArDecodeResult greedy_decode(nn::Graph& g, const EncoderOutput& enc, const ModelInput& input) const {
    const ArMemory mem = memory(g, enc);
    ArState state = initial_state(g, enc);
    ArGrammar grammar(cfg_.n_max_steps);
    ArDecodeResult out;
    int prev = ar_tokens::kGo;
    const std::size_t limit = cfg_.token_limit();
    while (out.tokens.size() < limit) {
      const auto mask = mask_for(grammar, input);
      const nn::Matrix& lp = step(g, state, prev, mem, &mask).value();
      int best = -1;
      for (Eigen::Index k = 0; k < lp.cols(); ++k) {
        if (mask[static_cast<std::size_t>(k)] && (best < 0 || lp(0, k) > lp(0, best))) best = static_cast<int>(k);
      }
      out.tokens.push_back(best);
      if (best == ar_tokens::kEof) break;
      grammar.advance(best);
      prev = best;
    }
    out.truncated = out.tokens.empty() || out.tokens.back() != ar_tokens::kEof;
    if (out.truncated) {
      out.error = "no EOF within " + std::to_string(limit) + " tokens";
      return out;
    }
    try {
      out.program = tokens_to_program(out.tokens, input);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  }

 private:
  ArConfig cfg_;
  int d_;
  nn::Parameter* embed_ = nullptr;
  nn::Parameter* fixed_keys_ = nullptr;
  nn::Linear init_;
  nn::Linear lstm_;
  nn::Parameter* key_ = nullptr;
  nn::Linear combine_;
};

}  // namespace napg
