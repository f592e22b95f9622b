#pragma once

// Exe Acc, Prog Acc, exact match and numeracy-focused F1.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "napg/program.hpp"

namespace napg {

/// Numeric answers match after 5-decimal rounding; booleans match exactly.
inline bool exe_acc(const AnswerValue& pred, const AnswerValue& gold) {
  if (pred.is_boolean() != gold.is_boolean()) return false;
  if (pred.is_boolean()) return pred.as_bool() == gold.as_bool();
  return format_number(pred.as_number()) == format_number(gold.as_number());
}

namespace detail {

inline bool is_commutative(Operator op) { return op == Operator::Add || op == Operator::Multiply; }

}  // namespace detail

/// Canonical-form equality. With `allow_commutative`, add/multiply steps also
/// match with swapped operands (off by default; strict form is the metric).
inline bool prog_acc(const Program& pred, const Program& gold, bool allow_commutative = false) {
  if (!allow_commutative) return serialize_program(pred) == serialize_program(gold);
  if (pred.size() != gold.size()) return false;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& p = pred[i];
    const auto& g = gold[i];
    if (p.op != g.op) return false;
    const bool same = format_operand(p.first) == format_operand(g.first) &&
                      format_operand(p.second) == format_operand(g.second);
    const bool swapped = detail::is_commutative(p.op) && format_operand(p.first) == format_operand(g.second) &&
                         format_operand(p.second) == format_operand(g.first);
    if (!same && !swapped) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Answer-string normalization

namespace detail {

inline bool parse_number_token(std::string_view token, double& out) {
  std::string cleaned;
  for (char c : token) {
    if (c != ',') cleaned += c;  // thousands separators
  }
  if (cleaned.empty()) return false;
  const char* first = cleaned.data();
  const char* last = cleaned.data() + cleaned.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

inline bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

/// One normalized token: either a canonical number or a lowercase word.
struct AnswerToken {
  std::string text;
  bool is_number = false;
};

inline std::vector<AnswerToken> normalize_tokens(std::string_view text) {
  std::vector<AnswerToken> out;
  std::string current;
  auto flush = [&] {
    if (current.empty()) return;
    double v = 0.0;
    if (parse_number_token(current, v)) {
      out.push_back({format_number(v), true});
    } else {
      std::string word;
      for (char c : current) {
        const auto uc = static_cast<unsigned char>(c);
        if (!std::ispunct(uc)) word += static_cast<char>(std::tolower(uc));
      }
      if (!word.empty() && !is_article(word)) out.push_back({word, false});
    }
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current += c;
    }
  }
  flush();
  return out;
}

/// Numeracy-focused bag: each number is its own item; each maximal run of
/// consecutive non-number words forms one text item.
inline std::set<std::string> answer_bag(const std::vector<AnswerToken>& tokens, std::set<std::string>& numbers) {
  std::set<std::string> bag;
  std::string run;
  for (const auto& t : tokens) {
    if (t.is_number) {
      if (!run.empty()) bag.insert(run);
      run.clear();
      bag.insert(t.text);
      numbers.insert(t.text);
    } else {
      run = run.empty() ? t.text : run + " " + t.text;
    }
  }
  if (!run.empty()) bag.insert(run);
  return bag;
}

}  // namespace detail

inline std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& t : detail::normalize_tokens(text)) {
    if (!out.empty()) out += ' ';
    out += t.text;
  }
  return out;
}

inline bool exact_match(std::string_view pred_text, std::string_view gold_text) {
  return normalize_answer(pred_text) == normalize_answer(gold_text);
}

/// DROP-style bag overlap F1, forced to zero when either side mentions a
/// number and the two sides share none.
inline double numeracy_f1(std::string_view pred_text, std::string_view gold_text) {
  std::set<std::string> pred_numbers;
  std::set<std::string> gold_numbers;
  const auto pred = detail::answer_bag(detail::normalize_tokens(pred_text), pred_numbers);
  const auto gold = detail::answer_bag(detail::normalize_tokens(gold_text), gold_numbers);

  if (!pred_numbers.empty() || !gold_numbers.empty()) {
    const bool shared = std::any_of(pred_numbers.begin(), pred_numbers.end(),
                                    [&](const std::string& n) { return gold_numbers.count(n) > 0; });
    if (!shared) return 0.0;
  }
  std::size_t common = 0;
  for (const auto& item : pred) common += gold.count(item);
  const double precision = pred.empty() ? 1.0 : static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = gold.empty() ? 1.0 : static_cast<double>(common) / static_cast<double>(gold.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Aggregation

struct ExampleScore {
  bool exe = false;
  bool prog = false;
  bool em = false;
  double f1 = 0.0;
};

struct BucketStats {
  std::size_t count = 0;
  double em = 0.0;
  double f1 = 0.0;
};

/// Step-count buckets: span (0 steps), 1, 2, 3, >3.
inline constexpr std::array<std::string_view, 5> kBucketLabels = {"span", "1", "2", "3", ">3"};

inline std::size_t step_bucket(std::size_t steps) { return steps > 3 ? 4 : steps; }

struct MetricsReport {
  double exe_acc = 0.0;
  double prog_acc = 0.0;
  double em = 0.0;
  double f1 = 0.0;
  std::array<BucketStats, kBucketLabels.size()> per_step_buckets{};
  std::size_t n_examples = 0;

  const BucketStats& bucket(std::size_t steps) const { return per_step_buckets[step_bucket(steps)]; }
};

inline MetricsReport aggregate(std::span<const ExampleScore> records, std::span<const std::size_t> step_counts) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  if (records.size() != step_counts.size()) throw std::invalid_argument("aggregate: records/step_counts misaligned");
  MetricsReport r;
  r.n_examples = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& s = records[i];
    r.exe_acc += s.exe;
    r.prog_acc += s.prog;
    r.em += s.em;
    r.f1 += s.f1;
    auto& b = r.per_step_buckets[step_bucket(step_counts[i])];
    ++b.count;
    b.em += s.em;
    b.f1 += s.f1;
  }
  const auto n = static_cast<double>(records.size());
  r.exe_acc /= n;
  r.prog_acc /= n;
  r.em /= n;
  r.f1 /= n;
  for (auto& b : r.per_step_buckets) {
    if (b.count > 0) {
      b.em /= static_cast<double>(b.count);
      b.f1 /= static_cast<double>(b.count);
    }
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json buckets = nlohmann::json::object();
  for (std::size_t i = 0; i < kBucketLabels.size(); ++i) {
    const auto& b = r.per_step_buckets[i];
    buckets[std::string(kBucketLabels[i])] = {{"n", b.count}, {"em", b.em}, {"f1", b.f1}};
  }
  return {{"exe_acc", r.exe_acc}, {"prog_acc", r.prog_acc}, {"em", r.em},
          {"f1", r.f1},           {"n_examples", r.n_examples}, {"per_step_buckets", buckets}};
}

}  // namespace napg
