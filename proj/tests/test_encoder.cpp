#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "napg/encoder.hpp"

using namespace napg;
using napg::testing::make_example;

namespace {

std::size_t count_candidates(const ModelInput& in) {
  std::size_t n = 0;
  for (bool b : in.candidate_mask) n += b;
  return n;
}

}  // namespace

TEST(BuildInput, CandidateCount) {
  const Example ex = make_example("what is the sum ?", "revenue was 390 . cost was 268 .", "add(390,268)");
  const Vocab v = Vocab::build({ex}, 5);
  const ModelInput in = build_input(ex, v, {});
  EXPECT_EQ(count_candidates(in), 2u + 17u + 5u);
  EXPECT_EQ(in.size(), 1 + 17 + 5 + ex.text_size());
  EXPECT_EQ(in.number_values.size(), 2u);
  for (std::size_t p = 0; p < in.size(); ++p) {
    const bool legal = in.kinds[p] == SlotKind::Number || in.kinds[p] == SlotKind::Constant || in.kinds[p] == SlotKind::StepToken;
    EXPECT_EQ(in.candidate_mask[p], legal) << p;
  }
}

TEST(BuildInput, StepReferenceAlignsToSlot) {
  const Example ex = make_example("q", "a 19520 b 21579", "subtract(19520,21579), divide(#0,21579)");
  const ModelInput in = build_input(ex, Vocab::build({ex}, 5), {});
  const Program p = ex.program();
  EXPECT_EQ(in.position_of(p.steps()[1].first), ModelInput::step_position(0));
  EXPECT_EQ(in.kinds[ModelInput::step_position(0)], SlotKind::StepToken);
  EXPECT_EQ(in.surface[ModelInput::step_position(0)], "#0");
  EXPECT_EQ(in.position_of(p.steps()[0].first), in.text_to_input[2]);
}

TEST(BuildInput, ConstantsOnlyProgram) {
  const Example ex = make_example("what is two times ten ?", "", "multiply(const_2,const_10)");
  const ModelInput in = build_input(ex, Vocab::build({ex}, 5), {});
  EXPECT_EQ(count_candidates(in), 17u + 5u);
  EXPECT_EQ(in.position_of(Constant::named("const_10")), ModelInput::constant_position(10));
  EXPECT_EQ(in.operand_at(ModelInput::constant_position(2)), Operand(Constant::named("const_2")));
}

TEST(BuildInput, Errors) {
  const Example ex = make_example("q", "a 5 b 3", "add(5,3)");
  const Vocab v = Vocab::build({ex}, 5);
  InputOptions tight;
  tight.max_len = 10;
  EXPECT_THROW(build_input(ex, v, tight), InputError);
  Example bad = ex;
  bad.gold = ProgramGold{"add(5,4)"};
  EXPECT_THROW(build_input(bad, v, {}), InputError);
  InputOptions wide;
  wide.n_max_steps = 6;
  EXPECT_THROW(build_input(ex, v, wide), InputError);
}

TEST(BuildInput, DigitTokens) {
  const Example ex = make_example("q", "a -1.5", "add(-1.5,const_1)");
  const Vocab v = Vocab::build({ex}, 5);
  InputOptions opt;
  opt.digit_tokens = true;
  const ModelInput in = build_input(ex, v, opt);
  const ModelInput plain = build_input(ex, v, {});
  // "-1.5" -> <minus> <d1> <dot> <d5>
  EXPECT_EQ(in.size(), plain.size() + 4);
  EXPECT_EQ(in.token_ids.back(), v.digit_id(5));
  EXPECT_FALSE(in.candidate_mask.back());
  EXPECT_EQ(count_candidates(in), count_candidates(plain));
}

TEST(Vocab, ReservedIdsAndJson) {
  const Example ex = make_example("what is it", "the value was 7", "add(7,const_1)");
  const Vocab v = Vocab::build({ex}, 5);
  EXPECT_EQ(v.token(Vocab::kPad), "[PAD]");
  EXPECT_EQ(v.token(Vocab::kCls), "[CLS]");
  EXPECT_EQ(v.token(v.constant_id(0)), "const_0");
  EXPECT_EQ(v.token(v.step_id(4)), "#4");
  EXPECT_FALSE(v.contains("7"));
  EXPECT_EQ(v.id("never-seen"), Vocab::kUnk);
  const Vocab back = Vocab::from_json(nlohmann::json::parse(v.to_json().dump()));
  EXPECT_EQ(back, v);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(static_cast<int>(i))), static_cast<int>(i));
}

namespace {

struct Tiny {
  nn::ParameterStore store;
  std::mt19937_64 rng{3};
  Example ex = make_example("what is the total of revenue and cost ?", "revenue was 390 . cost was 268 .", "add(390,268)");
  Vocab vocab = Vocab::build({ex}, 5);
  ModelInput input = build_input(ex, vocab, {});
  EncoderConfig cfg;
  std::unique_ptr<Encoder> enc;

  explicit Tiny(int d = 16, int heads = 2) {
    cfg.d_model = d;
    cfg.heads = heads;
    cfg.ffn_dim = 2 * d;
    enc = std::make_unique<Encoder>(store, cfg, vocab.size(), rng);
  }
};

}  // namespace

TEST(Encoder, ShapesAndDeterminism) {
  Tiny t;
  nn::Graph g1(false), g2(false);
  const EncoderOutput a = t.enc->encode(g1, t.input);
  const EncoderOutput b = t.enc->encode(g2, t.input);
  EXPECT_EQ(a.h_o.rows(), static_cast<Eigen::Index>(t.input.size()));
  EXPECT_EQ(a.h_o.cols(), 16);
  EXPECT_EQ(a.cls.rows(), 1);
  EXPECT_EQ(a.h_o.value(), b.h_o.value());
  EXPECT_EQ(a.cls.value(), nn::Matrix(a.h_o.value().row(0)));
}

TEST(Encoder, PositionSensitive) {
  Tiny t;
  ModelInput swapped = t.input;
  const std::size_t i = swapped.text_begin, j = swapped.text_begin + 1;
  std::swap(swapped.token_ids[i], swapped.token_ids[j]);
  nn::Graph g(false);
  const nn::Matrix a = t.enc->encode(g, t.input).h_o.value();
  const nn::Matrix b = t.enc->encode(g, swapped).h_o.value();
  EXPECT_NE(a.row(static_cast<Eigen::Index>(i)), b.row(static_cast<Eigen::Index>(j)));
  EXPECT_GT((a - b).norm(), 1e-6);
}

TEST(Encoder, CandidateMaskUnchangedByEncoding) {
  Tiny t;
  const auto before = t.input.candidate_mask;
  nn::Graph g(false);
  t.enc->encode(g, t.input);
  EXPECT_EQ(before, t.input.candidate_mask);
}

TEST(Encoder, RejectsBadIds) {
  Tiny t;
  ModelInput bad = t.input;
  bad.token_ids[3] = static_cast<int>(t.vocab.size());
  nn::Graph g(false);
  EXPECT_THROW(t.enc->encode(g, bad), nn::ShapeError);
}

TEST(Encoder, LayerGradientCheck) {
  Tiny t(8, 2);
  std::mt19937_64 rng(9);
  nn::Parameter& x = t.store.add("x", nn::normal_init(6, 8, 1.0, rng));
  const auto r = napg::testing::grad_check(
      t.store, [&](nn::Graph& g) { return napg::testing::project(g, t.enc->layer_forward(g, g.param(x), 0)); });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Encoder, FullEncoderGradientCheck) {
  Tiny t(8, 2);
  // Shorter input keeps the check quick.
  Example ex = make_example("sum ?", "a 1 b 2", "add(1,2)");
  ModelInput in = build_input(ex, t.vocab, {});
  const auto r = napg::testing::grad_check(
      t.store, [&](nn::Graph& g) { return napg::testing::project(g, t.enc->encode(g, in).h_o); });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}
