#pragma once

// Synthetic hybrid table/text QA generator.
//
// A context holds k facts, each naming a distinct entity and a distinct value,
// rendered either as a flattened table cell ("the revenue is 390 ;") or a
// sentence ("revenue was 390 ."). The question names the operation chain in
// words; the gold program is built from blocks and executed to get the answer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "napg/example.hpp"
#include "napg/program.hpp"

namespace napg {

struct GenSpec {
  std::size_t n_train = 5000;
  std::size_t n_dev = 500;
  std::size_t n_test = 500;
  std::map<std::size_t, double> step_distribution = {{1, 0.4}, {2, 0.35}, {3, 0.25}};
  double span_fraction = 0.0;
  std::size_t min_numbers = 4;  // facts per context
  std::size_t max_numbers = 8;
  double min_value = 10.0;
  double max_value = 9999.0;
  double decimal_fraction = 0.2;  // share of values with one decimal digit
  std::uint64_t seed = 42;

  void validate() const {
    if (step_distribution.empty()) throw std::invalid_argument("step_distribution is empty");
    double total = 0.0;
    for (const auto& [k, p] : step_distribution) {
      if (k < 1) throw std::invalid_argument("step counts start at 1");
      if (p < 0.0) throw std::invalid_argument("negative step probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("step_distribution must sum to 1");
    if (span_fraction < 0.0 || span_fraction > 1.0) throw std::invalid_argument("span_fraction outside [0, 1]");
    if (min_numbers < 3 || min_numbers > max_numbers) throw std::invalid_argument("need 3 <= min_numbers <= max_numbers");
    if (max_numbers > 40) throw std::invalid_argument("max_numbers above 40");
    if (!(min_value > 0.0) || !(max_value > min_value + 2.0 * static_cast<double>(max_numbers))) {
      throw std::invalid_argument("value range too small for distinct positive values");
    }
    if (decimal_fraction < 0.0 || decimal_fraction > 1.0) throw std::invalid_argument("decimal_fraction outside [0, 1]");
  }

  std::size_t max_steps() const { return step_distribution.rbegin()->first; }
};

inline nlohmann::json to_json(const GenSpec& s) {
  nlohmann::json dist = nlohmann::json::object();
  for (const auto& [k, p] : s.step_distribution) dist[std::to_string(k)] = p;
  return {{"n_train", s.n_train},
          {"n_dev", s.n_dev},
          {"n_test", s.n_test},
          {"step_distribution", dist},
          {"span_fraction", s.span_fraction},
          {"numbers_per_context", {s.min_numbers, s.max_numbers}},
          {"value_range", {s.min_value, s.max_value}},
          {"decimal_fraction", s.decimal_fraction},
          {"seed", s.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline GenSpec gen_spec_from_json(const nlohmann::json& j) {
  static const std::array<std::string_view, 9> known = {"n_train", "n_dev", "n_test", "step_distribution", "span_fraction",
                                                        "numbers_per_context", "value_range", "decimal_fraction", "seed"};
  if (!j.is_object()) throw std::invalid_argument("generation spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw std::invalid_argument("unknown spec key '" + key + "'");
  }
  GenSpec s;
  s.n_train = j.value("n_train", s.n_train);
  s.n_dev = j.value("n_dev", s.n_dev);
  s.n_test = j.value("n_test", s.n_test);
  if (j.contains("step_distribution")) {
    s.step_distribution.clear();
    for (const auto& [k, p] : j.at("step_distribution").items()) s.step_distribution[std::stoul(k)] = p.get<double>();
  }
  s.span_fraction = j.value("span_fraction", s.span_fraction);
  if (j.contains("numbers_per_context")) {
    const auto r = j.at("numbers_per_context").get<std::array<std::size_t, 2>>();
    s.min_numbers = r[0];
    s.max_numbers = r[1];
  }
  if (j.contains("value_range")) {
    const auto r = j.at("value_range").get<std::array<double, 2>>();
    s.min_value = r[0];
    s.max_value = r[1];
  }
  s.decimal_fraction = j.value("decimal_fraction", s.decimal_fraction);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

namespace synth_detail {

inline constexpr std::array<std::string_view, 40> kEntities = {
    "revenue",  "cost",     "profit",    "sales",      "expenses",  "assets",     "debt",     "equity",
    "income",   "tax",      "cash",      "inventory",  "dividends", "wages",      "rent",     "interest",
    "capex",    "margin",   "goodwill",  "payables",   "receivables", "deposits", "loans",    "fees",
    "royalties", "bonuses", "subsidies", "grants",     "refunds",   "claims",     "leases",   "pensions",
    "reserves", "tariffs",  "rebates",   "commissions", "premiums", "licenses",   "freight",  "utilities"};

inline constexpr std::array<std::string_view, 12> kCities = {
    "boston", "chicago", "denver", "seattle", "austin", "atlanta", "new york", "san diego", "las vegas",
    "kansas city", "salt lake", "el paso"};

inline constexpr std::array<std::string_view, 11> kNumberWords = {"zero", "one", "two", "three", "four", "five",
                                                                  "six",  "seven", "eight", "nine", "ten"};

struct Fact {
  std::string entity;
  double value = 0.0;
};

inline std::string render_value(double v) {
  if (v == std::floor(v)) return std::to_string(static_cast<long long>(v));
  return format_literal(v);
}

inline void append_words(std::vector<std::string>& out, std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
}

/// Builds the question and program together, step by step.
class ChainBuilder {
 public:
  ChainBuilder(std::mt19937_64& rng, const std::vector<Fact>& facts) : rng_(rng), facts_(facts) {}

  void build(std::size_t k) {
    start_block(k);
    while (steps_.size() < k) continue_block(k - steps_.size());
    question_.push_back("?");
  }

  std::vector<std::string> question() const { return question_; }
  std::vector<ProgramStep> steps() const { return steps_; }
  /// Fact indices in the order the question first names them.
  std::vector<std::size_t> mentioned() const { return mentioned_; }

 private:
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  /// A fact index not in `avoid`.
  std::size_t fact(std::initializer_list<std::size_t> avoid = {}) {
    for (;;) {
      const std::size_t f = pick(facts_.size());
      if (std::find(avoid.begin(), avoid.end(), f) != avoid.end()) continue;
      if (std::find(mentioned_.begin(), mentioned_.end(), f) == mentioned_.end()) mentioned_.push_back(f);
      return f;
    }
  }
  Operand lit(std::size_t f) const { return NumberLiteral{facts_[f].value}; }
  std::string name(std::size_t f) const { return "the " + facts_[f].entity; }
  StepRef last() const { return StepRef{steps_.size() - 1}; }
  void say(std::string_view text) { append_words(question_, text); }

  void start_block(std::size_t budget) {
    say("what is");
    const std::size_t a = fact();
    const std::size_t b = fact({a});
    // Multi-step openers only when the budget allows.
    std::vector<int> kinds = {0, 1, 2, 3, 4};
    if (budget >= 2) kinds.insert(kinds.end(), {5, 6});
    if (budget >= 3) kinds.push_back(7);
    if (budget == 1) kinds.push_back(8);
    switch (kinds[pick(kinds.size())]) {
      case 0:
        say("the sum of " + name(a) + " and " + name(b));
        steps_.push_back({Operator::Add, lit(a), lit(b)});
        break;
      case 1:
        say(name(a) + " minus " + name(b));
        steps_.push_back({Operator::Subtract, lit(a), lit(b)});
        break;
      case 2:
        say(name(a) + " times " + name(b));
        steps_.push_back({Operator::Multiply, lit(a), lit(b)});
        break;
      case 3:
        say(name(a) + " divided by " + name(b));
        steps_.push_back({Operator::Divide, lit(a), lit(b)});
        break;
      case 4:
        say(name(a) + " squared");
        steps_.push_back({Operator::Exp, lit(a), Constant::named("const_2")});
        break;
      case 5:
        say("the percent change from " + name(a) + " to " + name(b));
        steps_.push_back({Operator::Subtract, lit(b), lit(a)});
        steps_.push_back({Operator::Divide, StepRef{0}, lit(a)});
        break;
      case 6:
        say("the average of " + name(a) + " and " + name(b));
        steps_.push_back({Operator::Add, lit(a), lit(b)});
        steps_.push_back({Operator::Divide, StepRef{0}, Constant::named("const_2")});
        break;
      case 7: {
        const std::size_t c = fact({a, b});
        say("the average of " + name(a) + " , " + name(b) + " and " + name(c));
        steps_.push_back({Operator::Add, lit(a), lit(b)});
        steps_.push_back({Operator::Add, StepRef{0}, lit(c)});
        steps_.push_back({Operator::Divide, StepRef{1}, Constant::named("const_3")});
        break;
      }
      default:
        question_.clear();
        say("is " + name(a) + " greater than " + name(b));
        steps_.push_back({Operator::Greater, lit(a), lit(b)});
        break;
    }
  }

  void continue_block(std::size_t budget) {
    say(",");
    say("then");
    const std::size_t b = fact();
    std::vector<int> kinds = {0, 1, 2, 3, 4, 5, 6, 7};
    if (budget == 1) kinds.push_back(8);
    switch (kinds[pick(kinds.size())]) {
      case 0:
        say("add " + name(b));
        steps_.push_back({Operator::Add, last(), lit(b)});
        break;
      case 1:
        say("subtract " + name(b));
        steps_.push_back({Operator::Subtract, last(), lit(b)});
        break;
      case 2:
        say("subtract it from " + name(b));
        steps_.push_back({Operator::Subtract, lit(b), last()});
        break;
      case 3:
        say("multiply by " + name(b));
        steps_.push_back({Operator::Multiply, last(), lit(b)});
        break;
      case 4:
        say("divide by " + name(b));
        steps_.push_back({Operator::Divide, last(), lit(b)});
        break;
      case 5: {
        const std::size_t k = 2 + pick(9);  // two .. ten
        say("divide by " + std::string(kNumberWords[k]));
        steps_.push_back({Operator::Divide, last(), Constant::named("const_" + std::to_string(k))});
        break;
      }
      case 6: {
        static constexpr std::array<std::pair<std::string_view, std::string_view>, 3> scales = {
            {{"hundred", "const_100"}, {"thousand", "const_1000"}, {"million", "const_1000000"}}};
        const auto& [word, c] = scales[pick(scales.size())];
        const bool mul = pick(2) == 0;
        say(std::string(mul ? "multiply by one " : "divide by one ") + std::string(word));
        steps_.push_back({mul ? Operator::Multiply : Operator::Divide, last(), Constant::named(c)});
        break;
      }
      case 7:
        say("square it");
        steps_.push_back({Operator::Exp, last(), Constant::named("const_2")});
        break;
      default:
        say("is it greater than " + name(b));
        steps_.push_back({Operator::Greater, last(), lit(b)});
        break;
    }
  }

  std::mt19937_64& rng_;
  const std::vector<Fact>& facts_;
  std::vector<std::string> question_;
  std::vector<ProgramStep> steps_;
  std::vector<std::size_t> mentioned_;
};

inline std::vector<Fact> sample_facts(std::mt19937_64& rng, const GenSpec& spec) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(spec.min_numbers, spec.max_numbers)(rng);
  std::vector<std::size_t> ids(kEntities.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  std::uniform_real_distribution<double> value(spec.min_value, spec.max_value);
  std::bernoulli_distribution decimal(spec.decimal_fraction);
  std::vector<Fact> facts;
  while (facts.size() < n) {
    double v = decimal(rng) ? std::round(value(rng) * 10.0) / 10.0 : std::round(value(rng));
    v = std::clamp(v, spec.min_value, spec.max_value);
    const bool dup = std::any_of(facts.begin(), facts.end(), [&](const Fact& f) { return f.value == v; });
    if (!dup) facts.push_back({std::string(kEntities[ids[facts.size()]]), v});
  }
  return facts;
}

/// Renders facts as context tokens and records number positions (offset by the question length).
/// Facts listed in `mentioned` keep that relative order; the rest are shuffled around them.
inline void render_context(std::mt19937_64& rng, const std::vector<Fact>& facts, Example& ex,
                           const std::vector<std::size_t>& mentioned = {}) {
  std::vector<std::size_t> order(facts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  auto next = mentioned.begin();
  for (std::size_t& slot : order)
    if (std::find(mentioned.begin(), mentioned.end(), slot) != mentioned.end()) slot = *next++;
  const bool table = std::bernoulli_distribution(0.5)(rng);
  for (std::size_t i : order) {
    const Fact& f = facts[i];
    if (table) {
      append_words(ex.sentence_tokens, "the " + f.entity + " is");
    } else {
      append_words(ex.sentence_tokens, f.entity + " was");
    }
    ex.number_annotations[ex.question_tokens.size() + ex.sentence_tokens.size()] = f.value;
    ex.sentence_tokens.push_back(render_value(f.value));
    ex.sentence_tokens.push_back(table ? ";" : ".");
  }
}

/// Add/multiply over two literals lists them in context order, so the gold
/// operand order of a commutative step is never an arbitrary choice.
inline std::vector<ProgramStep> canonical_commutative(std::vector<ProgramStep> steps, const Example& ex) {
  auto position = [&](const Operand& o) -> std::optional<std::size_t> {
    const auto* lit = std::get_if<NumberLiteral>(&o);
    if (!lit) return std::nullopt;
    for (const auto& [pos, v] : ex.number_annotations)
      if (v == lit->value) return pos;
    return std::nullopt;
  };
  for (ProgramStep& s : steps) {
    if (s.op != Operator::Add && s.op != Operator::Multiply) continue;
    const auto a = position(s.first);
    const auto b = position(s.second);
    if (a && b && *b < *a) std::swap(s.first, s.second);
  }
  return steps;
}

}  // namespace synth_detail

inline constexpr int kMaxResamples = 100;

/// One example with `steps` reasoning steps (0 = span question).
inline Example generate_example(std::mt19937_64& rng, const GenSpec& spec, std::size_t steps, const std::string& id) {
  using namespace synth_detail;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    Example ex;
    ex.id = id;
    const std::vector<Fact> facts = sample_facts(rng, spec);
    if (steps == 0) {
      append_words(ex.question_tokens, "where is the company based ?");
      render_context(rng, facts, ex);
      const std::string_view city = kCities[std::uniform_int_distribution<std::size_t>(0, kCities.size() - 1)(rng)];
      // The location sentence goes at the front or the back of the context.
      std::vector<std::string> sentence;
      append_words(sentence, "the company is based in");
      const std::size_t span_offset = sentence.size();
      append_words(sentence, city);
      const std::size_t span_len = sentence.size() - span_offset;
      sentence.push_back(".");
      std::size_t begin = ex.question_tokens.size() + span_offset;
      if (std::bernoulli_distribution(0.5)(rng)) {
        std::map<std::size_t, double> shifted;
        for (const auto& [pos, v] : ex.number_annotations) shifted[pos + sentence.size()] = v;
        ex.number_annotations = std::move(shifted);
        ex.sentence_tokens.insert(ex.sentence_tokens.begin(), sentence.begin(), sentence.end());
      } else {
        begin += ex.sentence_tokens.size();
        ex.sentence_tokens.insert(ex.sentence_tokens.end(), sentence.begin(), sentence.end());
      }
      ex.gold = SpanGold{begin, begin + span_len};
      ex.answer = std::string(city);
      ex.step_count = 0;
      return ex;
    }
    ChainBuilder chain(rng, facts);
    chain.build(steps);
    try {
      const Program program(chain.steps());
      const AnswerValue answer = execute(program);
      if (answer.is_numeric() && !std::isfinite(answer.as_number())) continue;
      ex.question_tokens = chain.question();
      render_context(rng, facts, ex, chain.mentioned());
      ex.gold = ProgramGold{serialize_program(Program(canonical_commutative(chain.steps(), ex)))};
      ex.answer = format_answer(answer);
      ex.step_count = program.size();
      return ex;
    } catch (const ProgramError&) {
      continue;  // degenerate program: resample
    }
  }
  throw std::runtime_error("generate_example: no valid program after " + std::to_string(kMaxResamples) + " attempts");
}

/// Per-example generator: the step count and all content come from a stream
/// seeded by (seed, split, index), so examples can be produced independently.
inline Example generate_indexed(const GenSpec& spec, std::uint64_t split, std::size_t index, const std::string& id) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::size_t steps = 0;
  if (!std::bernoulli_distribution(spec.span_fraction)(rng)) {
    std::vector<std::size_t> ks;
    std::vector<double> ps;
    for (const auto& [k, p] : spec.step_distribution) {
      ks.push_back(k);
      ps.push_back(p);
    }
    steps = ks[std::discrete_distribution<std::size_t>(ps.begin(), ps.end())(rng)];
  }
  return generate_example(rng, spec, steps, id);
}

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

inline std::vector<Example> generate_split(const GenSpec& spec, std::uint64_t split, std::size_t n, const std::string& name) {
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = std::to_string(i + 1);
    id = name + "-" + std::string(id.size() < 6 ? 6 - id.size() : 0, '0') + id;
    out.push_back(generate_indexed(spec, split, i, id));
  }
  return out;
}

inline Dataset generate_dataset(const GenSpec& spec) {
  spec.validate();
  return {generate_split(spec, 0, spec.n_train, "train"), generate_split(spec, 1, spec.n_dev, "dev"),
          generate_split(spec, 2, spec.n_test, "test")};
}

}  // namespace napg
