#pragma once

// Inference-only decoders on plain Eigen, without graph bookkeeping. Weights
// are copied out of the parameter store at construction, so build these after
// training. They produce the same programs as the graph decoders; the bench
// times these paths for both decoder types.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "napg/ar_decoder.hpp"
#include "napg/encoder.hpp"
#include "napg/napg_head.hpp"

namespace napg {

using nn::Matrix;

namespace fast_detail {

inline void gelu_inplace(Matrix& m) {
  nn::gelu_inplace(m.data(), static_cast<std::size_t>(m.size()));
}

struct Ffn {
  Matrix w1, b1, w2, b2;

  static Ffn load(const nn::ParameterStore& store, const std::string& prefix) {
    return {store.at(prefix + ".w1").value, store.at(prefix + ".b1").value, store.at(prefix + ".w2").value,
            store.at(prefix + ".b2").value};
  }

  Matrix operator()(const Matrix& x) const {
    Matrix h = x * w1;
    h.rowwise() += b1.row(0);
    gelu_inplace(h);
    Matrix out = h * w2;
    out.rowwise() += b2.row(0);
    return out;
  }
};

}  // namespace fast_detail

/// Either a span or a program, like the graph decoders' results.
struct FastResult {
  std::optional<SpanPred> span;
  std::optional<Program> program;
  std::string error;
  std::size_t predicted_steps = 0;
  bool truncated = false;
};

class NapgFastDecoder {
 public:
  NapgFastDecoder(const nn::ParameterStore& store, const NapgConfig& cfg) : cfg_(cfg) {
    using fast_detail::Ffn;
    length_ = Ffn::load(store, "napg.length");
    extract_ = Ffn::load(store, "napg.extract");
    const std::size_t n = cfg.n_max_steps;
    const auto h = static_cast<Eigen::Index>(cfg.hidden);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string p = "napg.step" + std::to_string(i);
      const Ffn operand = Ffn::load(store, p + ".operand");
      if (i == 0) {
        operand_w1_.resize(operand.w1.rows(), h * static_cast<Eigen::Index>(n));
        operand_b1_.resize(1, h * static_cast<Eigen::Index>(n));
        operand_w2_.resize(h, static_cast<Eigen::Index>(n));
        operand_b2_.resize(1, static_cast<Eigen::Index>(n));
      }
      const auto c = static_cast<Eigen::Index>(i);
      operand_w1_.middleCols(c * h, h) = operand.w1;
      operand_b1_.middleCols(c * h, h) = operand.b1;
      operand_w2_.col(c) = operand.w2.col(0);
      operand_b2_(0, c) = operand.b2(0, 0);
      op_.push_back(Ffn::load(store, p + ".op"));
      order_.push_back(Ffn::load(store, p + ".order"));
    }
  }

  FastResult decode(const Matrix& h_o, const Matrix& cls, const ModelInput& input) const {
    FastResult out;
    const int length = detail::argmax_row(length_(cls));
    if (length == 0) {
      const Matrix logits = extract_(h_o);
      out.span = span_from_probabilities(p_operand(logits), input, cfg_.span_contiguous);
      return out;
    }

    const std::vector<std::size_t> rows = input.candidate_positions();
    const auto R = static_cast<Eigen::Index>(rows.size());
    Matrix h(R, h_o.cols());
    for (Eigen::Index r = 0; r < R; ++r) h.row(r) = h_o.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]));
    const Matrix p_t = p_operand(extract_(h));
    const Matrix h_s = (h.array().colwise() * p_t.col(0).array()).matrix();

    // All step scorers in one product: column block i holds step i's hidden layer.
    Matrix z = h_s * operand_w1_;
    z.rowwise() += operand_b1_.row(0);
    fast_detail::gelu_inplace(z);
    const auto hid = static_cast<Eigen::Index>(cfg_.hidden);
    const std::size_t n = cfg_.n_max_steps;

    std::vector<NapgHead::StepChoice> choices(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      Matrix scores = (z.middleCols(c * hid, hid) * operand_w2_.col(c)).transpose();
      scores.array() += operand_b2_(0, c);
      std::vector<std::size_t> cand;
      std::vector<Eigen::Index> local;
      for (Eigen::Index r = 0; r < R; ++r) {
        const std::size_t pos = rows[static_cast<std::size_t>(r)];
        if (input.kinds[pos] == SlotKind::StepToken && input.slot_index[pos] >= i) continue;
        cand.push_back(pos);
        local.push_back(r);
      }
      if (cand.size() < 2) throw InputError("step " + std::to_string(i) + " has fewer than two candidates");
      Matrix p(1, static_cast<Eigen::Index>(cand.size()));
      for (std::size_t k = 0; k < cand.size(); ++k) p(0, static_cast<Eigen::Index>(k)) = scores(0, local[k]);
      p.array() -= p.maxCoeff();
      p = p.array().exp().matrix();
      p /= p.sum();
      const auto top = top2(p, cand);

      Matrix pooled;
      if (cfg_.pooling == OpPooling::AllRows) {
        pooled = cls;
        for (std::size_t k = 0; k < cand.size(); ++k) pooled += p(0, static_cast<Eigen::Index>(k)) * h_s.row(local[k]);
        pooled /= static_cast<double>(input.size() + 1);
      } else {
        pooled = (cls + p(0, static_cast<Eigen::Index>(top[0])) * h_s.row(local[top[0]]) +
                  p(0, static_cast<Eigen::Index>(top[1])) * h_s.row(local[top[1]])) /
                 3.0;
      }
      choices[i].selected = {cand[top[0]], cand[top[1]]};
      choices[i].op_scores = op_[i](pooled);
      choices[i].reverse = detail::argmax_row(order_[i](pooled)) == 1;
    }
    out.program = NapgHead::assemble(choices, static_cast<std::size_t>(length), input);
    out.predicted_steps = static_cast<std::size_t>(length);
    return out;
  }

 private:
  // Operand-class probability from the two extractor logits.
  static Matrix p_operand(const Matrix& logits) {
    return (1.0 / (1.0 + (logits.col(0) - logits.col(1)).array().exp())).matrix();
  }

  NapgConfig cfg_;
  fast_detail::Ffn length_, extract_;
  Matrix operand_w1_, operand_b1_, operand_w2_, operand_b2_;
  std::vector<fast_detail::Ffn> op_, order_;
};

class ArFastDecoder {
 public:
  ArFastDecoder(const nn::ParameterStore& store, const ArConfig& cfg)
      : cfg_(cfg),
        embed_(store.at("ar.embed").value),
        fixed_keys_(store.at("ar.fixed_keys").value),
        init_w_(store.at("ar.init.w").value),
        init_b_(store.at("ar.init.b").value),
        lstm_w_(store.at("ar.lstm.w").value),
        lstm_b_(store.at("ar.lstm.b").value),
        key_w_(store.at("ar.key.w").value),
        combine_w_(store.at("ar.combine.w").value),
        combine_b_(store.at("ar.combine.b").value) {}

  FastResult decode(const Matrix& h_o, const Matrix& cls, const ModelInput& input) const {
    const Eigen::Index d = h_o.cols();
    Matrix keys(ar_tokens::kFixed + h_o.rows(), d);
    keys.topRows(ar_tokens::kFixed) = fixed_keys_;
    keys.bottomRows(h_o.rows()) = h_o * key_w_;
    Matrix h = (cls * init_w_ + init_b_).array().tanh().matrix();
    Matrix c = Matrix::Zero(1, d);
    Matrix xin(1, 2 * d);
    Matrix hc(1, 2 * d);

    ArGrammar grammar(cfg_.n_max_steps);
    std::vector<int> tokens;
    int prev = ar_tokens::kGo;
    const std::size_t limit = cfg_.token_limit();
    while (tokens.size() < limit) {
      const auto mask = cfg_.grammar_mask ? grammar.allowed(input) : plain_mask(input);
      if (ar_tokens::is_position(prev) && prev != ar_tokens::kGo) {
        xin.leftCols(d) = h_o.row(prev - ar_tokens::kFixed);
      } else {
        xin.leftCols(d) = embed_.row(prev);
      }
      xin.rightCols(d) = h;
      Matrix gates = xin * lstm_w_ + lstm_b_;
      auto sig = [](const auto& a) { return (1.0 / (1.0 + (-a).exp())).matrix(); };
      const Matrix i = sig(gates.leftCols(d).array());
      const Matrix f = sig(gates.middleCols(d, d).array());
      const Matrix g = gates.middleCols(2 * d, d).array().tanh().matrix();
      const Matrix o = sig(gates.rightCols(d).array());
      c = (f.array() * c.array() + i.array() * g.array()).matrix();
      h = (o.array() * c.array().tanh()).matrix();
      Matrix att = h * h_o.transpose();
      att.array() -= att.maxCoeff();
      att = att.array().exp().matrix();
      att /= att.sum();
      hc.leftCols(d) = h;
      hc.rightCols(d) = att * h_o;
      const Matrix combined = (hc * combine_w_ + combine_b_).array().tanh().matrix();
      const int best = detail::argmax_row(combined * keys.transpose(), &mask);
      tokens.push_back(best);
      if (best == ar_tokens::kEof) break;
      grammar.advance(best);
      prev = best;
    }

    FastResult out;
    for (int t : tokens) out.predicted_steps += t < static_cast<int>(kNumOperators);
    out.truncated = tokens.empty() || tokens.back() != ar_tokens::kEof;
    if (out.truncated) {
      out.error = "no EOF within " + std::to_string(limit) + " tokens";
      return out;
    }
    try {
      out.program = tokens_to_program(tokens, input);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  }

 private:
  static std::vector<bool> plain_mask(const ModelInput& input) {
    std::vector<bool> m(static_cast<std::size_t>(ar_tokens::kFixed) + input.size(), false);
    for (int t = 0; t < ar_tokens::kFixed; ++t) m[static_cast<std::size_t>(t)] = true;
    for (std::size_t p = 0; p < input.size(); ++p) m[static_cast<std::size_t>(ar_tokens::kFixed) + p] = input.candidate_mask[p];
    return m;
  }

  ArConfig cfg_;
  Matrix embed_, fixed_keys_, init_w_, init_b_, lstm_w_, lstm_b_, key_w_, combine_w_, combine_b_;
};

/// The fast path matching a model's decoder type.
class FastDecoder {
 public:
  explicit FastDecoder(NapgFastDecoder d) : impl_(std::move(d)) {}
  explicit FastDecoder(ArFastDecoder d) : impl_(std::move(d)) {}

  FastResult decode(const Matrix& h_o, const Matrix& cls, const ModelInput& input) const {
    return std::visit([&](const auto& d) { return d.decode(h_o, cls, input); }, impl_);
  }

 private:
  std::variant<NapgFastDecoder, ArFastDecoder> impl_;
};

}  // namespace napg
