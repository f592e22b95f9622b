#pragma once

#include <charconv>
#include <sstream>
#include <string>
#include <vector>

#include "napg/example.hpp"

namespace napg::testing {

inline std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Whitespace-tokenised example; every token that parses fully as a number is annotated.
inline Example make_example(const std::string& question, const std::string& sentences, const std::string& program,
                            const std::string& id = "t") {
  Example ex;
  ex.id = id;
  ex.question_tokens = split(question);
  ex.sentence_tokens = split(sentences);
  for (std::size_t pos = 0; pos < ex.text_size(); ++pos) {
    const std::string& tok = ex.text_token(pos);
    double v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec == std::errc() && ptr == tok.data() + tok.size()) ex.number_annotations[pos] = v;
  }
  if (program.empty()) {
    ex.gold = SpanGold{0, 1};
    ex.answer = ex.text_token(0);
  } else {
    const Program p = parse_program(program);
    ex.gold = ProgramGold{serialize_program(p)};
    ex.answer = format_answer(execute(p));
    ex.step_count = p.size();
  }
  return ex;
}

inline Example make_span_example(const std::string& question, const std::string& sentences, std::size_t begin,
                                 std::size_t end) {
  Example ex = make_example(question, sentences, "");
  ex.gold = SpanGold{begin, end};
  std::string answer;
  for (std::size_t p = begin; p < end; ++p) answer += (p > begin ? " " : "") + ex.text_token(p);
  ex.answer = answer;
  return ex;
}

}  // namespace napg::testing
