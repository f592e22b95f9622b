#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "napg/synth.hpp"

using namespace napg;

namespace {

GenSpec small_spec(std::size_t n_train) {
  GenSpec s;
  s.n_train = n_train;
  s.n_dev = 50;
  s.n_test = 50;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synth, GoldProgramsExecuteToAnswers) {
  GenSpec spec = small_spec(10000);
  spec.span_fraction = 0.1;
  const Dataset ds = generate_dataset(spec);
  ASSERT_EQ(ds.train.size(), 10000u);
  for (const Example& ex : ds.train) {
    if (ex.is_span()) {
      const auto span = std::get<SpanGold>(ex.gold);
      ASSERT_LT(span.begin, span.end);
      ASSERT_LE(span.end, ex.text_size());
      std::string text;
      for (std::size_t p = span.begin; p < span.end; ++p) text += (p > span.begin ? " " : "") + ex.text_token(p);
      EXPECT_EQ(text, ex.answer) << ex.id;
      EXPECT_EQ(ex.step_count, 0u);
      continue;
    }
    const Program p = ex.program();
    EXPECT_EQ(format_answer(execute(p)), ex.answer) << ex.id;
    EXPECT_EQ(p.size(), ex.step_count);
    // Greater only ever closes a program.
    for (std::size_t i = 0; i + 1 < p.size(); ++i) EXPECT_NE(p[i].op, Operator::Greater) << ex.id;
  }
}

TEST(Synth, StepHistogramMatchesDistribution) {
  const GenSpec spec = small_spec(10000);
  const Dataset ds = generate_dataset(spec);
  std::map<std::size_t, double> counts;
  for (const Example& ex : ds.train) counts[ex.step_count] += 1.0;
  for (const auto& [k, p] : spec.step_distribution) {
    EXPECT_NEAR(counts[k] / 10000.0, p, 0.02) << k;
  }
  EXPECT_EQ(counts.count(0), 0u);
}

TEST(Synth, LiteralsComeFromContext) {
  const Dataset ds = generate_dataset(small_spec(2000));
  for (const Example& ex : ds.train) {
    std::set<double> annotated;
    for (const auto& [pos, v] : ex.number_annotations) {
      ASSERT_LT(pos, ex.text_size());
      EXPECT_EQ(std::stod(ex.text_token(pos)), v);
      EXPECT_TRUE(annotated.insert(v).second) << "duplicate value in " << ex.id;
    }
    const Program program = ex.program();
    for (const ProgramStep& s : program.steps()) {
      for (const Operand* o : {&s.first, &s.second}) {
        if (const auto* lit = std::get_if<NumberLiteral>(o)) {
          EXPECT_TRUE(annotated.count(lit->value)) << ex.id << " " << lit->value;
        }
      }
    }
    // Numbers only appear in the context; the question spells everything out.
    for (const auto& tok : ex.question_tokens) {
      EXPECT_TRUE(tok.empty() || !std::isdigit(static_cast<unsigned char>(tok[0]))) << ex.id;
    }
  }
}

TEST(Synth, DeterministicAndRoundTrips) {
  const GenSpec spec = small_spec(300);
  const auto dir = std::filesystem::temp_directory_path() / "napg_synth_test";
  std::filesystem::create_directories(dir);
  const Dataset a = generate_dataset(spec);
  const Dataset b = generate_dataset(spec);
  save_examples((dir / "a.jsonl").string(), a.train);
  save_examples((dir / "b.jsonl").string(), b.train);
  EXPECT_EQ(read_file((dir / "a.jsonl").string()), read_file((dir / "b.jsonl").string()));
  EXPECT_EQ(load_examples((dir / "a.jsonl").string()), a.train);

  GenSpec other = spec;
  other.seed = spec.seed + 1;
  EXPECT_NE(generate_dataset(other).train, a.train);
  std::filesystem::remove_all(dir);
}

TEST(Synth, PrefixStableAcrossSizes) {
  // Example i depends only on (seed, split, i).
  const Dataset small = generate_dataset(small_spec(20));
  const Dataset big = generate_dataset(small_spec(40));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(small.train[i], big.train[i]);
}

TEST(Synth, SplitsAreDisjointStreams) {
  const Dataset ds = generate_dataset(small_spec(50));
  EXPECT_EQ(ds.train.front().id, "train-000001");
  EXPECT_EQ(ds.dev.front().id, "dev-000001");
  EXPECT_NE(ds.train.front().question_tokens, ds.dev.front().question_tokens);
}

TEST(Synth, SpanFractionRespected) {
  GenSpec spec = small_spec(4000);
  spec.span_fraction = 0.25;
  const Dataset ds = generate_dataset(spec);
  double spans = 0;
  for (const Example& ex : ds.train) spans += ex.is_span();
  EXPECT_NEAR(spans / 4000.0, 0.25, 0.02);
}

TEST(Synth, AnswerFormatMatchesExecutor) {
  const Example ex = napg::testing::make_example("what is the sum of the revenue and the cost ?",
                                                 "revenue was 390 . cost was 268 .", "add(390,268)");
  EXPECT_EQ(ex.answer, "658.0");
}

TEST(GenSpec, Validation) {
  GenSpec s;
  EXPECT_NO_THROW(s.validate());
  GenSpec bad = s;
  bad.step_distribution = {{1, 0.5}, {2, 0.4}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = s;
  bad.min_numbers = 2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = s;
  bad.step_distribution = {{0, 1.0}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = s;
  bad.span_fraction = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(GenSpec, JsonRoundTripAndUnknownKeys) {
  GenSpec s;
  s.n_train = 12;
  s.step_distribution = {{1, 0.5}, {4, 0.5}};
  s.span_fraction = 0.1;
  const GenSpec back = gen_spec_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_THROW(gen_spec_from_json({{"n_trian", 5}}), std::invalid_argument);
  EXPECT_EQ(gen_spec_from_json(nlohmann::json::object()).n_train, GenSpec{}.n_train);
}

TEST(Synth, LongProgramsReachRequestedLength) {
  GenSpec spec = small_spec(200);
  spec.step_distribution = {{10, 1.0}};
  const Dataset ds = generate_dataset(spec);
  for (const Example& ex : ds.train) EXPECT_EQ(ex.program().size(), 10u);
}
