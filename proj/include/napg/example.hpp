#pragma once

// One QA instance and its JSON-lines representation.
//
// Token positions ("text positions") index the concatenation
// question_tokens ++ sentence_tokens.
//
// {"id": "train-000001",
//  "question_tokens": ["what", "is", ...],
//  "sentence_tokens": ["revenue", "was", "390", ".", ...],
//  "number_annotations": [{"pos": 9, "value": 390.0}, ...],
//  "gold": {"type": "program", "program": "add(390.0,268.0)"}
//        | {"type": "span", "begin": 14, "end": 16},
//  "answer": "658.0",
//  "step_count": 1}

#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "napg/program.hpp"

namespace napg {

struct ProgramGold {
  std::string program;
  friend bool operator==(const ProgramGold&, const ProgramGold&) = default;
};

/// Half-open range [begin, end) of text positions.
struct SpanGold {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const SpanGold&, const SpanGold&) = default;
};

struct Example {
  std::string id;
  std::vector<std::string> question_tokens;
  std::vector<std::string> sentence_tokens;
  std::map<std::size_t, double> number_annotations;
  std::variant<ProgramGold, SpanGold> gold;
  std::string answer;
  std::size_t step_count = 0;

  bool is_span() const { return std::holds_alternative<SpanGold>(gold); }
  std::size_t text_size() const { return question_tokens.size() + sentence_tokens.size(); }
  const std::string& text_token(std::size_t pos) const {
    return pos < question_tokens.size() ? question_tokens.at(pos) : sentence_tokens.at(pos - question_tokens.size());
  }
  Program program() const { return parse_program(std::get<ProgramGold>(gold).program); }

  friend bool operator==(const Example&, const Example&) = default;
};

inline nlohmann::json to_json(const Example& ex) {
  nlohmann::json numbers = nlohmann::json::array();
  for (const auto& [pos, value] : ex.number_annotations) numbers.push_back({{"pos", pos}, {"value", value}});
  nlohmann::json gold;
  if (const auto* p = std::get_if<ProgramGold>(&ex.gold)) {
    gold = {{"type", "program"}, {"program", p->program}};
  } else {
    const auto& s = std::get<SpanGold>(ex.gold);
    gold = {{"type", "span"}, {"begin", s.begin}, {"end", s.end}};
  }
  return {{"id", ex.id},
          {"question_tokens", ex.question_tokens},
          {"sentence_tokens", ex.sentence_tokens},
          {"number_annotations", std::move(numbers)},
          {"gold", std::move(gold)},
          {"answer", ex.answer},
          {"step_count", ex.step_count}};
}

inline Example example_from_json(const nlohmann::json& j) {
  Example ex;
  ex.id = j.at("id").get<std::string>();
  ex.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
  ex.sentence_tokens = j.at("sentence_tokens").get<std::vector<std::string>>();
  for (const auto& n : j.at("number_annotations")) {
    const auto pos = n.at("pos").get<std::size_t>();
    if (pos >= ex.text_size()) throw std::runtime_error("number annotation position out of range");
    ex.number_annotations[pos] = n.at("value").get<double>();
  }
  const auto& gold = j.at("gold");
  const auto type = gold.at("type").get<std::string>();
  if (type == "program") {
    ex.gold = ProgramGold{gold.at("program").get<std::string>()};
  } else if (type == "span") {
    SpanGold s{gold.at("begin").get<std::size_t>(), gold.at("end").get<std::size_t>()};
    if (s.begin >= s.end || s.end > ex.text_size()) throw std::runtime_error("span out of range");
    ex.gold = s;
  } else {
    throw std::runtime_error("unknown gold type '" + type + "'");
  }
  ex.answer = j.at("answer").get<std::string>();
  ex.step_count = j.at("step_count").get<std::size_t>();
  return ex;
}

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void save_examples(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot open " + path + " for writing");
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
  if (!out) throw DatasetError("write failed: " + path);
}

inline std::vector<Example> load_examples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace napg
