#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "napg/program.hpp"

using namespace napg;

namespace {

// Independent 5-decimal rendering: printf rounding on a pre-rounded value.
std::string oracle_5dp(double v) {
  const double r = std::round(v * 1e5) / 1e5;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", r);
  std::string s = buf;
  while (s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  if (s == "-0.0") s = "0.0";
  return s;
}

std::string run(const std::string& text) { return format_answer(execute(parse_program(text))); }

Program random_program(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 6);
  std::uniform_int_distribution<int> kind(0, 2);
  std::uniform_int_distribution<std::size_t> cidx(0, kConstants.size() - 1);
  std::uniform_real_distribution<double> val(-1e6, 1e6);
  std::uniform_int_distribution<int> opd(0, 4);  // Greater only as the last step
  const int n = len(rng);
  std::vector<ProgramStep> steps;
  for (int i = 0; i < n; ++i) {
    auto operand = [&]() -> Operand {
      const int k = kind(rng);
      if (k == 2 && i > 0) return StepRef{std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(i - 1))(rng)};
      if (k == 1) return Constant{cidx(rng)};
      // Mix of short decimals and full-precision doubles.
      const double v = val(rng);
      return NumberLiteral{rng() % 2 ? std::round(v * 100) / 100 : v};
    };
    const Operator op = (i == n - 1 && rng() % 7 == 0) ? Operator::Greater : kAllOperators[static_cast<std::size_t>(opd(rng))];
    Operand a = operand();
    Operand b = operand();
    steps.push_back({op, a, b});
  }
  return Program(std::move(steps));
}

}  // namespace

TEST(ProgramParse, TwoStepReference) {
  const Program p = parse_program("subtract(19520,21579), divide(#0,21579)");
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p.steps()[0].op, Operator::Subtract);
  EXPECT_EQ(p.steps()[0].first, Operand(NumberLiteral{19520}));
  EXPECT_EQ(p.steps()[0].second, Operand(NumberLiteral{21579}));
  EXPECT_EQ(p.steps()[1].op, Operator::Divide);
  EXPECT_EQ(p.steps()[1].first, Operand(StepRef{0}));
}

TEST(ProgramParse, MinimalProgram) {
  const Program p = parse_program("add(5,5)");
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(serialize_program(p), "add(5.0,5.0)");
}

TEST(ProgramParse, ForwardReferenceRejected) {
  try {
    parse_program("divide(#1,3)");
    FAIL() << "expected an error";
  } catch (const ProgramError& e) {
    EXPECT_EQ(e.kind(), ProgramError::Kind::ForwardReference);
  }
}

TEST(ProgramParse, SelfReferenceRejected) {
  EXPECT_THROW(parse_program("add(1,2), add(#1,2)"), ProgramError);
}

TEST(ProgramParse, Errors) {
  auto kind_of = [](const std::string& s) {
    try {
      parse_program(s);
    } catch (const ProgramError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error for " << s;
    return ProgramError::Kind::Empty;
  };
  EXPECT_EQ(kind_of("add(1,)"), ProgramError::Kind::Syntax);
  EXPECT_EQ(kind_of("add(1,2"), ProgramError::Kind::Syntax);
  EXPECT_EQ(kind_of("add(1,2,3)"), ProgramError::Kind::Syntax);
  EXPECT_EQ(kind_of("add(1)"), ProgramError::Kind::Syntax);
  EXPECT_EQ(kind_of("modulo(1,2)"), ProgramError::Kind::UnknownOperator);
  EXPECT_EQ(kind_of("add(const_11,2)"), ProgramError::Kind::UnknownConstant);
  EXPECT_EQ(kind_of("greater(1,2), add(#0,1)"), ProgramError::Kind::BooleanReference);
  EXPECT_THROW(parse_program(""), ProgramError);
  EXPECT_THROW(parse_program("add(1,2),"), ProgramError);
}

TEST(ProgramParse, SyntaxErrorCarriesPosition) {
  try {
    parse_program("add(1,2), sub tract(1,2)");
    FAIL();
  } catch (const ProgramError& e) {
    EXPECT_GE(e.position(), 10u);
  }
}

TEST(ProgramParse, LenientWhitespaceAndConstants) {
  const Program p = parse_program("  add( const_2 , 3.50 ) ,exp(#0,const_m1)");
  EXPECT_EQ(serialize_program(p), "add(const_2,3.5), exp(#0,const_m1)");
}

TEST(ProgramSerialize, TypeTwoExample) {
  const Program p({{Operator::Add, NumberLiteral{390}, NumberLiteral{268}}, {Operator::Add, StepRef{0}, NumberLiteral{77}}});
  EXPECT_EQ(serialize_program(p), "add(390.0,268.0), add(#0,77.0)");
}

TEST(ProgramSerialize, EmptyProgramRejected) {
  EXPECT_THROW(Program(std::vector<ProgramStep>{}), ProgramError);
}

TEST(ProgramSerialize, RoundTripRandomPrograms) {
  std::mt19937_64 rng(12345);
  for (int i = 0; i < 1000; ++i) {
    const Program p = random_program(rng);
    const std::string s = serialize_program(p);
    const Program q = parse_program(s);
    ASSERT_EQ(q, p) << s;
    ASSERT_EQ(serialize_program(q), s);
  }
}

TEST(ProgramSerialize, CanonicalizationIdempotent) {
  for (const char* s : {"add(390,268)", "add(1e3, 2)", "subtract(  -5 ,0.500)"}) {
    const std::string once = serialize_program(parse_program(s));
    EXPECT_EQ(serialize_program(parse_program(once)), once);
  }
  EXPECT_EQ(serialize_program(parse_program("add(390,268)")), serialize_program(parse_program("add(390.0,268.0)")));
}

TEST(ProgramExecute, ReferenceProgramsMatchHandArithmetic) {
  EXPECT_EQ(run("subtract(19520,21579), divide(#0,21579)"), oracle_5dp((19520.0 - 21579.0) / 21579.0));
  EXPECT_EQ(run("subtract(19520,21579), divide(#0,21579)"), "-0.09542");
  EXPECT_EQ(run("add(390,268), add(#0,77)"), "735.0");
  EXPECT_EQ(run("add(4082,1256), add(#0,301)"), "5639.0");
  EXPECT_EQ(run("add(603,649), add(#0,628), divide(#1,3)"), "626.66667");
  EXPECT_EQ(run("add(603,649), add(#0,628), divide(#1,3)"), oracle_5dp((603.0 + 649 + 628) / 3));
  EXPECT_EQ(run("add(140,56), add(#0,56), add(#1,21)"), "273.0");
}

TEST(ProgramExecute, GreaterAndErrors) {
  EXPECT_EQ(run("greater(2,1)"), "yes");
  EXPECT_EQ(run("greater(1,2)"), "no");
  try {
    execute(parse_program("divide(1,0)"));
    FAIL();
  } catch (const ProgramError& e) {
    EXPECT_EQ(e.kind(), ProgramError::Kind::DivisionByZero);
  }
  try {
    execute(parse_program("exp(10,400)"));
    FAIL();
  } catch (const ProgramError& e) {
    EXPECT_EQ(e.kind(), ProgramError::Kind::NonFinite);
  }
}

TEST(ProgramExecute, ExpIsPower) {
  EXPECT_EQ(run("exp(2,10)"), "1024.0");
  EXPECT_EQ(run("exp(const_10,const_2)"), "100.0");
}

TEST(ProgramExecute, Commutativity) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-1e5, 1e5);
  for (int i = 0; i < 500; ++i) {
    const double a = d(rng), b = d(rng);
    for (Operator op : {Operator::Add, Operator::Multiply}) {
      const auto x = execute(Program({{op, NumberLiteral{a}, NumberLiteral{b}}}));
      const auto y = execute(Program({{op, NumberLiteral{b}, NumberLiteral{a}}}));
      ASSERT_EQ(x.as_number(), y.as_number());
    }
  }
}

TEST(ProgramExecute, Deterministic) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 200; ++i) {
    const Program p = random_program(rng);
    std::string a, b;
    try {
      a = format_answer(execute(p));
    } catch (const ProgramError& e) {
      a = e.what();
    }
    try {
      b = format_answer(execute(p));
    } catch (const ProgramError& e) {
      b = e.what();
    }
    ASSERT_EQ(a, b);
  }
}

TEST(ResolveOperand, Cases) {
  const std::vector<AnswerValue> none;
  EXPECT_EQ(resolve_operand(Constant::named("const_2"), none), 2.0);
  EXPECT_EQ(resolve_operand(Constant::named("const_1000"), none), 1000.0);
  EXPECT_EQ(resolve_operand(Constant::named("const_m1"), none), -1.0);
  const std::vector<AnswerValue> prior = {AnswerValue::numeric(19520.0 - 21579.0)};
  EXPECT_EQ(resolve_operand(StepRef{0}, prior), -2059.0);
  const std::vector<AnswerValue> boolean = {AnswerValue::boolean(true)};
  EXPECT_THROW(resolve_operand(StepRef{0}, boolean), ProgramError);
  EXPECT_THROW(resolve_operand(StepRef{1}, prior), ProgramError);
}

TEST(ConstantTable, Contents) {
  EXPECT_EQ(kConstants.size(), 17u);
  for (int i = 0; i <= 10; ++i) EXPECT_EQ(Constant::named("const_" + std::to_string(i)).value(), i);
  EXPECT_EQ(Constant::named("const_1000000").value(), 1e6);
  EXPECT_EQ(kAllOperators.size(), 6u);
}

TEST(FormatNumber, HalfAwayFromZero) {
  EXPECT_EQ(format_number(0.000005), "0.00001");
  EXPECT_EQ(format_number(-0.000005), "-0.00001");
  EXPECT_EQ(format_number(735), "735.0");
  EXPECT_EQ(format_number(-0.000001), "0.0");
  EXPECT_EQ(format_number(626.666666666), "626.66667");
}
