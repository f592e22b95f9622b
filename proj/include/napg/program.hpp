#pragma once

// Numerical-reasoning program DSL: grammar, validation, canonical
// serialization and execution.
//
//   program := step ("," ws* step)*
//   step    := op "(" operand "," operand ")"
//   op      := add | subtract | multiply | divide | exp | greater
//   operand := number | "#" digits | "const_" token

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace napg {

enum class Operator : std::uint8_t { Add, Subtract, Multiply, Divide, Exp, Greater };

inline constexpr std::size_t kNumOperators = 6;
inline constexpr std::array<Operator, kNumOperators> kAllOperators = {
    Operator::Add, Operator::Subtract, Operator::Multiply,
    Operator::Divide, Operator::Exp, Operator::Greater};

inline constexpr std::string_view operator_name(Operator op) {
  switch (op) {
    case Operator::Add: return "add";
    case Operator::Subtract: return "subtract";
    case Operator::Multiply: return "multiply";
    case Operator::Divide: return "divide";
    case Operator::Exp: return "exp";
    case Operator::Greater: return "greater";
  }
  return "?";
}

inline std::optional<Operator> operator_from_name(std::string_view name) {
  for (Operator op : kAllOperators) {
    if (operator_name(op) == name) return op;
  }
  return std::nullopt;
}

inline constexpr std::size_t operator_index(Operator op) { return static_cast<std::size_t>(op); }

// ---------------------------------------------------------------------------
// Constant vocabulary: small integers, common order-of-magnitude values, -1.

struct ConstantDef {
  std::string_view name;
  double value;
};

inline constexpr std::array<ConstantDef, 17> kConstants = {{
    {"const_0", 0.0},         {"const_1", 1.0},       {"const_2", 2.0},
    {"const_3", 3.0},         {"const_4", 4.0},       {"const_5", 5.0},
    {"const_6", 6.0},         {"const_7", 7.0},       {"const_8", 8.0},
    {"const_9", 9.0},         {"const_10", 10.0},     {"const_100", 100.0},
    {"const_1000", 1000.0},   {"const_10000", 1e4},   {"const_100000", 1e5},
    {"const_1000000", 1e6},   {"const_m1", -1.0},
}};

inline std::optional<std::size_t> constant_index(std::string_view name) {
  for (std::size_t i = 0; i < kConstants.size(); ++i) {
    if (kConstants[i].name == name) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Errors

class ProgramError : public std::runtime_error {
 public:
  enum class Kind {
    Syntax,
    UnknownOperator,
    UnknownConstant,
    ForwardReference,
    BooleanReference,
    Empty,
    DivisionByZero,
    NonFinite,
  };

  ProgramError(Kind kind, std::size_t position, const std::string& reason)
      : std::runtime_error(describe(kind, position, reason)), kind_(kind), position_(position) {}

  Kind kind() const noexcept { return kind_; }
  /// Byte offset in the source text, or the step index for validation/execution errors.
  std::size_t position() const noexcept { return position_; }

 private:
  static std::string describe(Kind kind, std::size_t position, const std::string& reason) {
    const char* label = "";
    switch (kind) {
      case Kind::Syntax: label = "syntax error"; break;
      case Kind::UnknownOperator: label = "unknown operator"; break;
      case Kind::UnknownConstant: label = "unknown constant"; break;
      case Kind::ForwardReference: label = "invalid step reference"; break;
      case Kind::BooleanReference: label = "boolean used as number"; break;
      case Kind::Empty: label = "empty program"; break;
      case Kind::DivisionByZero: label = "division by zero"; break;
      case Kind::NonFinite: label = "non-finite result"; break;
    }
    return std::string(label) + " at " + std::to_string(position) + ": " + reason;
  }

  Kind kind_;
  std::size_t position_;
};

// ---------------------------------------------------------------------------
// Operands and steps

struct NumberLiteral {
  double value = 0.0;
  friend bool operator==(const NumberLiteral&, const NumberLiteral&) = default;
};

struct Constant {
  std::size_t id = 0;  // index into kConstants

  std::string_view name() const { return kConstants.at(id).name; }
  double value() const { return kConstants.at(id).value; }
  friend bool operator==(const Constant&, const Constant&) = default;

  static Constant named(std::string_view name) {
    auto idx = constant_index(name);
    if (!idx) throw ProgramError(ProgramError::Kind::UnknownConstant, 0, std::string(name));
    return Constant{*idx};
  }
};

struct StepRef {
  std::size_t index = 0;
  friend bool operator==(const StepRef&, const StepRef&) = default;
};

using Operand = std::variant<NumberLiteral, Constant, StepRef>;

struct ProgramStep {
  Operator op = Operator::Add;
  Operand first;
  Operand second;
  friend bool operator==(const ProgramStep&, const ProgramStep&) = default;
};

/// Shortest round-trip decimal rendering with at least one fractional digit.
inline std::string format_literal(double value) {
  if (value == 0.0) value = 0.0;  // drop the sign of -0
  std::array<char, 512> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed);
  std::string out(buf.data(), res.ptr);
  if (out.find('.') == std::string::npos) out += ".0";
  return out;
}

inline std::string format_operand(const Operand& operand) {
  if (auto* lit = std::get_if<NumberLiteral>(&operand)) return format_literal(lit->value);
  if (auto* c = std::get_if<Constant>(&operand)) return std::string(c->name());
  return "#" + std::to_string(std::get<StepRef>(operand).index);
}

// ---------------------------------------------------------------------------
// Program

class Program {
 public:
  /// Validates: non-empty, references only to earlier non-Greater steps.
  explicit Program(std::vector<ProgramStep> steps) : steps_(std::move(steps)) { validate(); }

  std::span<const ProgramStep> steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return steps_.size(); }
  const ProgramStep& operator[](std::size_t i) const { return steps_.at(i); }

  friend bool operator==(const Program&, const Program&) = default;

 private:
  void validate() const {
    if (steps_.empty()) throw ProgramError(ProgramError::Kind::Empty, 0, "program needs at least one step");
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      for (const Operand* o : {&steps_[i].first, &steps_[i].second}) {
        const auto* ref = std::get_if<StepRef>(o);
        if (!ref) {
          if (const auto* lit = std::get_if<NumberLiteral>(o); lit && !std::isfinite(lit->value)) {
            throw ProgramError(ProgramError::Kind::NonFinite, i, "literal is not finite");
          }
          continue;
        }
        if (ref->index >= i) {
          throw ProgramError(ProgramError::Kind::ForwardReference, i,
                             "step " + std::to_string(i) + " references #" + std::to_string(ref->index));
        }
        if (steps_[ref->index].op == Operator::Greater) {
          throw ProgramError(ProgramError::Kind::BooleanReference, i,
                             "#" + std::to_string(ref->index) + " is a greater() result");
        }
      }
    }
  }

  std::vector<ProgramStep> steps_;
};

inline std::string serialize_program(const Program& program) {
  std::string out;
  for (std::size_t i = 0; i < program.size(); ++i) {
    const auto& s = program[i];
    if (i > 0) out += ", ";
    out += operator_name(s.op);
    out += '(';
    out += format_operand(s.first);
    out += ',';
    out += format_operand(s.second);
    out += ')';
  }
  return out;
}

namespace detail {

class ProgramParser {
 public:
  explicit ProgramParser(std::string_view text) : text_(text) {}

  Program parse() {
    skip_ws();
    if (at_end()) fail(ProgramError::Kind::Empty, "empty program text");
    std::vector<ProgramStep> steps;
    std::vector<std::size_t> step_offsets;
    while (true) {
      skip_ws();
      step_offsets.push_back(pos_);
      steps.push_back(parse_step(steps.size()));
      skip_ws();
      if (at_end()) break;
      expect(',', "expected ',' between steps");
    }
    try {
      return Program(std::move(steps));
    } catch (const ProgramError& e) {
      // Re-anchor validation errors at the offending step's offset.
      throw ProgramError(e.kind(), step_offsets.at(e.position()), strip_prefix(e.what()));
    }
  }

 private:
  static std::string strip_prefix(const char* what) {
    std::string s(what);
    auto colon = s.find(": ");
    return colon == std::string::npos ? s : s.substr(colon + 2);
  }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  void skip_ws() {
    while (!at_end() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r')) {
      ++pos_;
    }
  }

  [[noreturn]] void fail(ProgramError::Kind kind, const std::string& reason) const {
    throw ProgramError(kind, pos_, reason);
  }

  void expect(char c, const char* reason) {
    skip_ws();
    if (peek() != c) fail(ProgramError::Kind::Syntax, reason);
    ++pos_;
  }

  static bool is_ident(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  }

  ProgramStep parse_step(std::size_t step_index) {
    const std::size_t start = pos_;
    while (!at_end() && is_ident(peek())) ++pos_;
    if (pos_ == start) fail(ProgramError::Kind::Syntax, "expected operator name");
    const std::string_view name = text_.substr(start, pos_ - start);
    auto op = operator_from_name(name);
    if (!op) throw ProgramError(ProgramError::Kind::UnknownOperator, start, std::string(name));
    expect('(', "expected '(' after operator");
    Operand a = parse_operand(step_index);
    expect(',', "expected ',' between operands");
    Operand b = parse_operand(step_index);
    expect(')', "expected ')' closing step");
    return ProgramStep{*op, a, b};
  }

  Operand parse_operand(std::size_t step_index) {
    skip_ws();
    const std::size_t start = pos_;
    const char c = peek();
    if (c == '#') {
      ++pos_;
      const std::size_t digits = pos_;
      while (!at_end() && peek() >= '0' && peek() <= '9') ++pos_;
      if (pos_ == digits) fail(ProgramError::Kind::Syntax, "expected digits after '#'");
      std::size_t idx = 0;
      auto [ptr, ec] = std::from_chars(text_.data() + digits, text_.data() + pos_, idx);
      if (ec != std::errc{}) fail(ProgramError::Kind::Syntax, "step index out of range");
      if (idx >= step_index) {
        throw ProgramError(ProgramError::Kind::ForwardReference, start,
                           "step " + std::to_string(step_index) + " references #" + std::to_string(idx));
      }
      return StepRef{idx};
    }
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      while (!at_end() && is_ident(peek())) ++pos_;
      const std::string_view name = text_.substr(start, pos_ - start);
      auto idx = constant_index(name);
      if (!idx) throw ProgramError(ProgramError::Kind::UnknownConstant, start, std::string(name));
      return Constant{*idx};
    }
    if (c == '-' || c == '+' || c == '.' || (c >= '0' && c <= '9')) {
      const char* first = text_.data() + pos_ + (c == '+' ? 1 : 0);
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), value);
      if (ec != std::errc{} || ptr == first) fail(ProgramError::Kind::Syntax, "malformed number");
      pos_ = static_cast<std::size_t>(ptr - text_.data());
      if (!std::isfinite(value)) throw ProgramError(ProgramError::Kind::NonFinite, start, "literal is not finite");
      return NumberLiteral{value == 0.0 ? 0.0 : value};
    }
    fail(ProgramError::Kind::Syntax, at_end() ? "unexpected end of input" : "expected operand");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Program parse_program(std::string_view text) { return detail::ProgramParser(text).parse(); }

// ---------------------------------------------------------------------------
// Answers

struct AnswerValue {
  std::variant<double, bool> value;

  static AnswerValue numeric(double v) { return AnswerValue{v}; }
  static AnswerValue boolean(bool b) { return AnswerValue{b}; }

  bool is_numeric() const { return std::holds_alternative<double>(value); }
  bool is_boolean() const { return std::holds_alternative<bool>(value); }
  double as_number() const { return std::get<double>(value); }
  bool as_bool() const { return std::get<bool>(value); }

  friend bool operator==(const AnswerValue&, const AnswerValue&) = default;
};

inline constexpr int kAnswerDecimals = 5;

/// Rounds half away from zero to five decimals and renders with at least one
/// fractional digit: -0.0954177 -> "-0.09542", 273 -> "273.0".
inline std::string format_number(double value) {
  if (!std::isfinite(value)) return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  const double scaled = std::round(value * 1e5);
  if (std::fabs(scaled) >= 9.0e15) return format_literal(std::round(value));
  auto q = static_cast<std::int64_t>(scaled);
  const bool negative = q < 0;
  if (negative) q = -q;
  const std::int64_t whole = q / 100000;
  std::string frac = std::to_string(q % 100000);
  frac.insert(0, 5 - frac.size(), '0');
  while (frac.size() > 1 && frac.back() == '0') frac.pop_back();
  return (negative ? "-" : "") + std::to_string(whole) + "." + frac;
}

inline std::string format_answer(const AnswerValue& answer) {
  if (answer.is_boolean()) return answer.as_bool() ? "yes" : "no";
  return format_number(answer.as_number());
}

// ---------------------------------------------------------------------------
// Execution

inline double resolve_operand(const Operand& operand, std::span<const AnswerValue> prior) {
  if (const auto* lit = std::get_if<NumberLiteral>(&operand)) return lit->value;
  if (const auto* c = std::get_if<Constant>(&operand)) return c->value();
  const auto ref = std::get<StepRef>(operand);
  if (ref.index >= prior.size()) {
    throw ProgramError(ProgramError::Kind::ForwardReference, prior.size(),
                       "#" + std::to_string(ref.index) + " has no result yet");
  }
  const AnswerValue& v = prior[ref.index];
  if (!v.is_numeric()) {
    throw ProgramError(ProgramError::Kind::BooleanReference, prior.size(),
                       "#" + std::to_string(ref.index) + " is boolean");
  }
  return v.as_number();
}

inline AnswerValue apply_operator(Operator op, double a, double b, std::size_t step) {
  double r = 0.0;
  switch (op) {
    case Operator::Add: r = a + b; break;
    case Operator::Subtract: r = a - b; break;
    case Operator::Multiply: r = a * b; break;
    case Operator::Divide:
      if (b == 0.0) throw ProgramError(ProgramError::Kind::DivisionByZero, step, "divisor is zero");
      r = a / b;
      break;
    case Operator::Exp: r = std::pow(a, b); break;
    case Operator::Greater: return AnswerValue::boolean(a > b);
  }
  if (!std::isfinite(r)) throw ProgramError(ProgramError::Kind::NonFinite, step, "result is not finite");
  return AnswerValue::numeric(r);
}

/// Evaluates every step in order; step i's result is bound to #i.
inline std::vector<AnswerValue> execute_all(const Program& program) {
  std::vector<AnswerValue> results;
  results.reserve(program.size());
  for (std::size_t i = 0; i < program.size(); ++i) {
    const auto& s = program[i];
    const double a = resolve_operand(s.first, results);
    const double b = resolve_operand(s.second, results);
    results.push_back(apply_operator(s.op, a, b, i));
  }
  return results;
}

inline AnswerValue execute(const Program& program) { return execute_all(program).back(); }

}  // namespace napg
