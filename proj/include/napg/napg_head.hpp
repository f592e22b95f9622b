#pragma once

// Non-autoregressive program generator.
//
// A length predictor reads [CLS]; a soft-masking operand extractor scores
// every token as a likely operand and blends the encoder states toward the
// (zero) mask embedding; then n independent tuple generators each pick two
// operands, an operator and an operand order from that shared representation.
// No generator reads another generator's output, so all n run in parallel.

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "napg/autodiff.hpp"
#include "napg/encoder.hpp"
#include "napg/example.hpp"
#include "napg/layers.hpp"
#include "napg/program.hpp"

namespace napg {

struct LossWeights {
  double t = 1.0;
  double length = 1.0;
  double e = 1.0;
  double op = 2.0;
  double order = 1.5;
};

enum class OpPooling {
  Selected,  // mean of [CLS] and the two selected operand rows of h_e
  AllRows,   // mean of [CLS] and every row of h_e
};

struct NapgConfig {
  std::size_t n_max_steps = 5;
  LossWeights lambda;
  int hidden = 64;
  OpPooling pooling = OpPooling::Selected;
  bool span_contiguous = true;  // extend the top token to its run with p_t > 0.5
};

struct ExtractorOutput {
  nn::Var log_p_t;                 // R x 2 (column 1 = operand)
  nn::Var p_t;                     // R x 1
  nn::Var h_s;                     // R x d
  nn::Var v_m;                     // 1 x d, fixed zero
  std::vector<std::size_t> rows;   // input position of each row
  std::size_t input_size = 0;      // T
};

struct StepOutput {
  std::vector<std::size_t> candidates;  // input positions covered by p_e / h_e
  nn::Var log_p_e;                      // 1 x C
  nn::Var p_e;                          // 1 x C
  nn::Var h_e;                          // C x d (non-candidate rows equal v_m)
  std::array<std::size_t, 2> selected{};  // top-2 by p_e, ascending p_e rank
  nn::Var log_p_op;                     // 1 x 6
  nn::Var log_p_order;                  // 1 x 2

  /// p_e scattered over all T input positions.
  std::vector<double> full_p_e(std::size_t input_size) const {
    std::vector<double> out(input_size, 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) out[candidates[c]] = p_e.value()(0, static_cast<Eigen::Index>(c));
    return out;
  }
  std::size_t local_index(std::size_t position) const {
    auto it = std::find(candidates.begin(), candidates.end(), position);
    if (it == candidates.end()) throw InputError("position " + std::to_string(position) + " is not a candidate for this step");
    return static_cast<std::size_t>(it - candidates.begin());
  }
};

struct StepTarget {
  std::array<std::size_t, 2> positions{};  // gold first, second operand
  int op = 0;
  int order = 0;  // 1 iff the gold pair is reversed relative to input order
};

struct TrainingTargets {
  std::vector<int> r_t;
  int r_length = 0;
  std::vector<StepTarget> steps;
};

struct NapgOutputs {
  nn::Var log_p_length;  // 1 x (n+1)
  nn::Var log_p_t;       // T x 2
  std::vector<StepOutput> steps;
};

/// Text positions [begin, end).
struct SpanPred {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const SpanPred&, const SpanPred&) = default;
};

struct Prediction {
  std::variant<Program, SpanPred> value;
  bool is_span() const { return std::holds_alternative<SpanPred>(value); }
};

namespace detail {

inline int argmax_row(const nn::Matrix& m, const std::vector<bool>* allowed = nullptr) {
  int best = -1;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (allowed && !(*allowed)[static_cast<std::size_t>(c)]) continue;
    if (best < 0 || m(0, c) > m(0, best)) best = static_cast<int>(c);
  }
  return best;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

inline std::vector<int> to_int(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace detail

/// Top two entries of a 1 x C row; equal probabilities go to the lower position.
inline std::array<std::size_t, 2> top2(const nn::Matrix& p, const std::vector<std::size_t>& positions) {
  if (p.cols() < 2) throw InputError("step needs at least two candidate positions");
  std::vector<std::size_t> order(static_cast<std::size_t>(p.cols()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + 2, order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = p(0, static_cast<Eigen::Index>(a));
    const double pb = p(0, static_cast<Eigen::Index>(b));
    if (pa != pb) return pa > pb;
    return positions[a] < positions[b];
  });
  return {order[0], order[1]};
}

/// Gold targets for one example; operands align through ModelInput::position_of.
inline TrainingTargets build_targets(const Example& ex, const ModelInput& input) {
  TrainingTargets t;
  t.r_t.assign(input.size(), 0);
  if (const auto* span = std::get_if<SpanGold>(&ex.gold)) {
    t.r_length = 0;
    for (std::size_t p = span->begin; p < span->end; ++p) t.r_t[input.text_to_input.at(p)] = 1;
    return t;
  }
  const Program program = ex.program();
  if (program.size() > input.n_steps) {
    throw InputError(ex.id + ": program has " + std::to_string(program.size()) + " steps, model supports " +
                     std::to_string(input.n_steps));
  }
  t.r_length = static_cast<int>(program.size());
  for (const auto& step : program.steps()) {
    const auto a = input.position_of(step.first);
    const auto b = input.position_of(step.second);
    if (!a || !b) throw InputError(ex.id + ": unalignable operand");
    if (*a == *b) throw InputError(ex.id + ": both operands align to position " + std::to_string(*a));
    StepTarget st;
    st.positions = {*a, *b};
    st.op = static_cast<int>(operator_index(step.op));
    st.order = *a > *b ? 1 : 0;
    t.r_t[*a] = 1;
    t.r_t[*b] = 1;
    t.steps.push_back(st);
  }
  return t;
}

/// Per-component loss sums before weighting.
struct LossTerms {
  nn::Var t, length, e, op, order;
};

inline LossTerms loss_terms(const NapgOutputs& out, const TrainingTargets& targets) {
  const auto L = static_cast<std::size_t>(targets.r_length);
  if (targets.steps.size() < L) throw std::invalid_argument("compute_loss: missing targets for an in-range step");
  if (out.steps.size() < L) throw std::invalid_argument("compute_loss: missing outputs for an in-range step");
  nn::Graph& g = *out.log_p_t.graph();
  LossTerms terms;
  terms.t = nn::nll_loss(out.log_p_t, targets.r_t);
  terms.length = nn::nll_loss(out.log_p_length, targets.r_length);
  std::vector<nn::Var> e, op, order;
  for (std::size_t i = 0; i < L; ++i) {
    const StepOutput& s = out.steps[i];
    const StepTarget& st = targets.steps[i];
    e.push_back(nn::gather_sum(s.log_p_e,
                               {{0, static_cast<int>(s.local_index(st.positions[0]))},
                                {0, static_cast<int>(s.local_index(st.positions[1]))}},
                               -1.0));
    op.push_back(nn::nll_loss(s.log_p_op, st.op));
    order.push_back(nn::nll_loss(s.log_p_order, st.order));
  }
  auto sum = [&](const std::vector<nn::Var>& v) {
    if (v.empty()) return g.constant(nn::Matrix::Zero(1, 1));
    return nn::weighted_sum(v, std::vector<double>(v.size(), 1.0));
  };
  terms.e = sum(e);
  terms.op = sum(op);
  terms.order = sum(order);
  return terms;
}

/// lambda-weighted sum of the component NLLs.
inline nn::Var compute_loss(const NapgOutputs& out, const TrainingTargets& targets, const LossWeights& w) {
  const LossTerms t = loss_terms(out, targets);
  const std::array<nn::Var, 5> vars = {t.t, t.length, t.e, t.op, t.order};
  const std::array<double, 5> weights = {w.t, w.length, w.e, w.op, w.order};
  return nn::weighted_sum(vars, weights);
}

/// Span from per-position operand probabilities (T x 1 over all input rows):
/// the most likely text token, optionally grown to its run with p_t > 0.5.
inline SpanPred span_from_probabilities(const nn::Matrix& p, const ModelInput& input, bool contiguous) {
  auto is_text = [&](std::size_t pos) {
    return input.kinds[pos] == SlotKind::Word || input.kinds[pos] == SlotKind::Number;
  };
  auto at = [&](std::size_t pos) { return p(static_cast<Eigen::Index>(pos), 0); };
  std::size_t best = input.size();
  for (std::size_t pos = input.text_begin; pos < input.size(); ++pos) {
    if (is_text(pos) && (best == input.size() || at(pos) > at(best))) best = pos;
  }
  if (best == input.size()) throw InputError("no text tokens to extract a span from");
  std::size_t lo = best;
  std::size_t hi = best;
  if (contiguous) {
    auto above = [&](std::size_t pos) { return is_text(pos) && at(pos) > 0.5; };
    while (lo > input.text_begin && above(lo - 1)) --lo;
    while (hi + 1 < input.size() && above(hi + 1)) ++hi;
  }
  return SpanPred{input.slot_index[lo], input.slot_index[hi] + 1};
}

class NapgHead {
 public:
  NapgHead(nn::ParameterStore& store, const NapgConfig& cfg, int d_model, std::mt19937_64& rng)
      : cfg_(cfg), d_model_(d_model) {
    if (cfg.n_max_steps < 1) throw std::invalid_argument("n_max_steps must be at least 1");
    const auto n = static_cast<Eigen::Index>(cfg.n_max_steps);
    length_ = nn::FfnParams::create(store, "napg.length", d_model, cfg.hidden, n + 1, rng);
    extract_ = nn::FfnParams::create(store, "napg.extract", d_model, cfg.hidden, 2, rng);
    for (std::size_t i = 0; i < cfg.n_max_steps; ++i) {
      const std::string p = "napg.step" + std::to_string(i);
      StepParams s;
      s.operand = nn::FfnParams::create(store, p + ".operand", d_model, cfg.hidden, 1, rng);
      s.op = nn::FfnParams::create(store, p + ".op", d_model, cfg.hidden, static_cast<Eigen::Index>(kNumOperators), rng);
      s.order = nn::FfnParams::create(store, p + ".order", d_model, cfg.hidden, 2, rng);
      steps_.push_back(s);
    }
  }

  const NapgConfig& config() const noexcept { return cfg_; }

  /// log-softmax over lengths 0..n (0 = span extraction).
  nn::Var predict_length(nn::Graph& g, const nn::Var& cls) const {
    return nn::log_softmax_rows(nn::ffn_forward(g, cls, length_));
  }

  /// Scores `rows` of h_o (all rows when empty) and soft-masks them.
  ExtractorOutput extract_operands(nn::Graph& g, const EncoderOutput& enc, std::vector<std::size_t> rows = {}) const {
    ExtractorOutput out;
    out.input_size = static_cast<std::size_t>(enc.h_o.rows());
    const bool full = rows.empty();
    out.rows = full ? detail::all_rows(out.input_size) : std::move(rows);
    nn::Var h = full ? enc.h_o : nn::select_rows(enc.h_o, detail::to_int(out.rows));
    nn::Var logits = nn::ffn_forward(g, h, extract_);
    out.log_p_t = nn::log_softmax_rows(logits);
    out.p_t = nn::column(nn::softmax_rows(logits), 1);
    out.v_m = g.constant(nn::Matrix::Zero(1, d_model_));
    out.h_s = nn::soft_mask(h, out.p_t, out.v_m);
    return out;
  }

  /// Step i's tuple generator. `step_mask` marks legal operand positions over
  /// all T inputs. `pool_at` overrides which two positions feed the operator
  /// and order classifiers (gold positions during training).
  StepOutput step_generate(nn::Graph& g, std::size_t i, const ExtractorOutput& ext, const nn::Var& cls,
                           const std::vector<bool>& step_mask,
                           const std::array<std::size_t, 2>* pool_at = nullptr) const {
    const StepParams& sp = steps_.at(i);
    StepOutput out;
    std::vector<int> local;
    for (std::size_t r = 0; r < ext.rows.size(); ++r) {
      if (step_mask.at(ext.rows[r])) {
        out.candidates.push_back(ext.rows[r]);
        local.push_back(static_cast<int>(r));
      }
    }
    if (out.candidates.size() < 2) throw InputError("step " + std::to_string(i) + " has fewer than two candidates");
    nn::Var hs = local.size() == ext.rows.size() ? ext.h_s : nn::select_rows(ext.h_s, std::move(local));
    nn::Var logits = nn::transpose(nn::ffn_forward(g, hs, sp.operand));
    out.log_p_e = nn::log_softmax_rows(logits);
    out.p_e = nn::softmax_rows(logits);
    const auto top = top2(out.p_e.value(), out.candidates);
    out.selected = {out.candidates[top[0]], out.candidates[top[1]]};
    out.h_e = nn::soft_mask(hs, nn::transpose(out.p_e), ext.v_m);

    nn::Var pooled;
    if (cfg_.pooling == OpPooling::AllRows) {
      const std::array<nn::Var, 2> parts = {cls, out.h_e};
      // Rows outside the candidate set equal v_m = 0; they only change the divisor.
      const double c = static_cast<double>(out.candidates.size() + 1);
      pooled = nn::scale(nn::mean_rows(nn::concat_rows(parts)), c / static_cast<double>(ext.input_size + 1));
    } else {
      const auto& at = pool_at ? *pool_at : out.selected;
      const std::array<nn::Var, 3> parts = {
          cls, nn::select_rows(out.h_e, {static_cast<int>(out.local_index(at[0]))}),
          nn::select_rows(out.h_e, {static_cast<int>(out.local_index(at[1]))})};
      pooled = nn::mean_pool(parts);
    }
    out.log_p_op = nn::log_softmax_rows(nn::ffn_forward(g, pooled, sp.op));
    out.log_p_order = nn::log_softmax_rows(nn::ffn_forward(g, pooled, sp.order));
    return out;
  }

  /// Training-time forward: full extractor, steps 0..r_length-1 pooled at gold operands.
  NapgOutputs forward_train(nn::Graph& g, const EncoderOutput& enc, const ModelInput& input,
                            const TrainingTargets& targets) const {
    NapgOutputs out;
    out.log_p_length = predict_length(g, enc.cls);
    ExtractorOutput ext = extract_operands(g, enc);
    out.log_p_t = ext.log_p_t;
    for (std::size_t i = 0; i < static_cast<std::size_t>(targets.r_length); ++i) {
      out.steps.push_back(step_generate(g, i, ext, enc.cls, input.step_candidates(i), &targets.steps.at(i).positions));
    }
    return out;
  }

  nn::Var loss(nn::Graph& g, const EncoderOutput& enc, const ModelInput& input, const TrainingTargets& targets) const {
    return compute_loss(forward_train(g, enc, input, targets), targets, cfg_.lambda);
  }

  /// Greedy decode. All n generators run whatever the predicted length.
  Prediction decode(nn::Graph& g, const EncoderOutput& enc, const ModelInput& input) const {
    const int length = detail::argmax_row(predict_length(g, enc.cls).value());
    if (length == 0) {
      return Prediction{span_from_probabilities(extract_operands(g, enc).p_t.value(), input, cfg_.span_contiguous)};
    }

    const ExtractorOutput ext = extract_operands(g, enc, input.candidate_positions());
    std::vector<StepOutput> steps;
    steps.reserve(cfg_.n_max_steps);
    for (std::size_t i = 0; i < cfg_.n_max_steps; ++i) {
      steps.push_back(step_generate(g, i, ext, enc.cls, input.step_candidates(i)));
    }
    return Prediction{assemble_program(steps, static_cast<std::size_t>(length), input)};
  }

  /// What program assembly needs from one step.
  struct StepChoice {
    std::array<std::size_t, 2> selected{};
    nn::Matrix op_scores;  // 1 x kNumOperators, any monotone scale
    bool reverse = false;
  };

  static Program assemble_program(const std::vector<StepOutput>& steps, std::size_t length, const ModelInput& input) {
    std::vector<StepChoice> choices;
    for (std::size_t i = 0; i < length; ++i) {
      const StepOutput& s = steps.at(i);
      choices.push_back({s.selected, s.log_p_op.value(), detail::argmax_row(s.log_p_order.value()) == 1});
    }
    return assemble(choices, length, input);
  }

  /// Turns the first `length` step choices into a program. Operands go in input
  /// order, swapped when the order classifier says "reverse". Greater is only
  /// allowed on the final step so no boolean result is ever referenced.
  static Program assemble(const std::vector<StepChoice>& steps, std::size_t length, const ModelInput& input) {
    std::vector<bool> no_greater(kNumOperators, true);
    no_greater[operator_index(Operator::Greater)] = false;
    std::vector<ProgramStep> out;
    for (std::size_t i = 0; i < length; ++i) {
      const StepChoice& s = steps.at(i);
      auto a = std::min(s.selected[0], s.selected[1]);
      auto b = std::max(s.selected[0], s.selected[1]);
      if (s.reverse) std::swap(a, b);
      const int op = detail::argmax_row(s.op_scores, i + 1 < length ? &no_greater : nullptr);
      out.push_back(ProgramStep{kAllOperators[static_cast<std::size_t>(op)], input.operand_at(a), input.operand_at(b)});
    }
    return Program(std::move(out));
  }

 private:
  struct StepParams {
    nn::FfnParams operand;
    nn::FfnParams op;
    nn::FfnParams order;
  };

  NapgConfig cfg_;
  int d_model_;
  nn::FfnParams length_;
  nn::FfnParams extract_;
  std::vector<StepParams> steps_;
};

}  // namespace napg
