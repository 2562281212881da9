// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/domain.hpp"
#include "clue/gateway.hpp"
#include "clue/result.hpp"
#include "clue/text.hpp"

namespace clue {

/// Canonical form used for answer comparison: markdown emphasis characters
/// removed, whitespace collapsed, trailing sentence punctuation stripped,
/// lowercased.
inline std::string normalize_answer(std::string_view s) {
  std::string stripped;
  stripped.reserve(s.size());
  for (char c : s) {
    if (c == '*' || c == '_' || c == '`') continue;
    stripped.push_back(c);
  }
  std::string out = trim(collapse_whitespace(stripped));
  while (!out.empty()) {
    char tail = out.back();
    if (tail == '.' || tail == '!' || tail == '?' || tail == ';' || tail == ':' || tail == ',')
      out.pop_back();
    else
      break;
  }
  return to_lower(trim(out));
}

namespace detail {

/// Rest of the line after the last "answer:"/"answer =" style marker
/// (case-insensitive, optional leading "final", word boundary enforced).
/// Falls through to the next non-empty line when the marker ends its line.
/// nullopt = no marker anywhere; an empty string = marker with no content.
inline std::optional<std::string> marker_answer(std::string_view text) {
  const std::string lower = to_lower(text);
  constexpr std::string_view kWord = "answer";
  std::size_t best_after = std::string::npos;
  std::size_t pos = lower.find(kWord);
  while (pos != std::string::npos) {
    const bool boundary =
        pos == 0 || !std::isalpha(static_cast<unsigned char>(lower[pos - 1]));
    std::size_t j = pos + kWord.size();
    while (j < lower.size() && (lower[j] == ' ' || lower[j] == '\t')) ++j;
    if (boundary && j < lower.size() && (lower[j] == ':' || lower[j] == '='))
      best_after = j + 1;
    pos = lower.find(kWord, pos + 1);
  }
  if (best_after == std::string::npos) return std::nullopt;

  const std::size_t eol = text.find('\n', best_after);
  const std::size_t line_end = eol == std::string_view::npos ? text.size() : eol;
  std::string rest = trim(text.substr(best_after, line_end - best_after));
  if (!rest.empty()) return rest;
  if (eol != std::string_view::npos) {
    for (const std::string& line : split_lines(text.substr(eol + 1))) {
      std::string t = trim(line);
      if (!t.empty()) return t;
    }
  }
  return std::string();
}

/// Content of the last \boxed{...} (balanced) or, failing that, the last
/// complete **...** span with non-empty content.
inline std::optional<std::string> emphasized_answer(std::string_view text) {
  const std::size_t box = text.rfind("\\boxed{");
  if (box != std::string_view::npos) {
    const std::size_t open = box + 6;  // index of '{'
    const std::size_t end = scan_balanced(text, open, '{', '}');
    if (end != std::string_view::npos) {
      std::string inner = trim(text.substr(open + 1, end - open - 2));
      if (!inner.empty()) return inner;
    }
  }
  std::vector<std::size_t> marks;
  for (std::size_t p = text.find("**"); p != std::string_view::npos; p = text.find("**", p + 2))
    marks.push_back(p);
  for (std::size_t i = marks.size() / 2; i-- > 0;) {
    const std::size_t open = marks[2 * i], close = marks[2 * i + 1];
    std::string inner = trim(text.substr(open + 2, close - open - 2));
    if (!inner.empty()) return inner;
  }
  return std::nullopt;
}

inline std::string last_nonempty_line(std::string_view text) {
  const std::vector<std::string> lines = split_lines(text);
  for (std::size_t i = lines.size(); i-- > 0;) {
    std::string t = trim(lines[i]);
    if (!t.empty()) return t;
  }
  return std::string();
}

/// Last standalone uppercase letter within the first n_choices letters of the
/// alphabet (any uppercase letter when n_choices is 0).
inline std::optional<char> last_bare_letter(std::string_view text, std::size_t n_choices) {
  std::optional<char> found;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isalnum(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
    if (j - i == 1 && std::isupper(static_cast<unsigned char>(text[i]))) {
      const char letter = text[i];
      if (n_choices == 0 || letter < static_cast<char>('A' + n_choices)) found = letter;
    }
    i = j;
  }
  return found;
}

}  // namespace detail

/// Pulls the candidate answer out of a model response. Extraction order:
/// explicit answer marker, then boxed/bold-emphasized final token, then the
/// last non-empty line. Numeric responses additionally reduce to the last
/// number in the candidate (or whole response). Returns "" when nothing
/// usable is present; callers map that to reward 0.
inline std::string extract_final_answer(std::string_view response_text, RewardKind kind) {
  std::string candidate;
  if (auto marked = detail::marker_answer(response_text)) {
    candidate = *marked;
  } else if (auto emphasized = detail::emphasized_answer(response_text)) {
    candidate = *emphasized;
  } else {
    candidate = detail::last_nonempty_line(response_text);
  }
  if (kind == RewardKind::numeric) {
    std::optional<double> value = last_number(candidate);
    if (!value) value = last_number(response_text);
    return value ? format_number(*value) : std::string();
  }
  return candidate;
}

/// Verdict grammar: scanning words in reading order, the first hit among
/// {yes, correct} scores 1 and the first among {no, incorrect} scores 0;
/// whichever comes first wins. No hit at all scores 0.
inline double parse_judge_verdict(std::string_view verdict_text) {
  for (const std::string& word : word_tokens(verdict_text)) {
    if (word == "yes" || word == "correct") return 1.0;
    if (word == "no" || word == "incorrect") return 0.0;
  }
  return 0.0;
}

/// Evaluates the rule expression tree: {"contains": s} (case-insensitive
/// substring), {"regex": pattern}, {"all_of": [...]}, {"any_of": [...]}.
inline Result<bool> evaluate_rule(const json& expr, const std::string& response) {
  if (!expr.is_object() || expr.size() != 1)
    return make_error(Errc::parse_error, "rule node must be an object with exactly one operator");
  const auto item = expr.items().begin();
  const std::string& op = item.key();
  const json& arg = item.value();
  if (op == "contains") {
    if (!arg.is_string()) return make_error(Errc::parse_error, "contains needs a string");
    return to_lower(response).find(to_lower(arg.get<std::string>())) != std::string::npos;
  }
  if (op == "regex") {
    if (!arg.is_string()) return make_error(Errc::parse_error, "regex needs a string");
    try {
      return std::regex_search(response, std::regex(arg.get<std::string>()));
    } catch (const std::regex_error& e) {
      return make_error(Errc::parse_error, std::string("bad regex: ") + e.what());
    }
  }
  if (op == "all_of" || op == "any_of") {
    if (!arg.is_array()) return make_error(Errc::parse_error, op + " needs an array");
    for (const json& child : arg) {
      Result<bool> r = evaluate_rule(child, response);
      if (!r.ok()) return r;
      if (op == "all_of" && !r.value()) return false;
      if (op == "any_of" && r.value()) return true;
    }
    return op == "all_of";  // vacuous all_of is true, vacuous any_of false
  }
  return make_error(Errc::parse_error, "unknown rule operator: " + op);
}

/// Result of scoring one response. Malformed responses never raise; they
/// score 0 and carry a diagnostic explaining why.
struct Scored {
  double reward = 0.0;
  std::optional<std::string> diagnostic;
};

/// Verifier plug-in: scores a response given its spec params and the example.
using ExternalVerifier =
    std::function<Result<double>(const json& params, const std::string& response_text,
                                 const Example& example)>;

/// Scores responses against every built-in reward kind. All built-in rewards
/// are binary; fractional values can only come from external verifiers.
/// Scoring is total: any response-side failure folds to reward 0 with a
/// diagnostic. The only hard error is an unregistered external verifier id.
class RewardEngine {
 public:
  RewardEngine(std::shared_ptr<Gateway> gateway, std::string judge_template)
      : gateway_(std::move(gateway)), judge_template_(std::move(judge_template)) {}

  void register_verifier(const std::string& verifier_id, ExternalVerifier verifier) {
    verifiers_[verifier_id] = std::move(verifier);
  }

  Result<Scored> score(const RewardSpec& spec, const std::string& response_text,
                       const Example& example) const {
    try {
      switch (spec.kind()) {
        case RewardKind::exact_match:
          return score_exact(std::get<ExactMatchSpec>(spec.payload), response_text);
        case RewardKind::multiple_choice:
          return score_choice(std::get<MultipleChoiceSpec>(spec.payload), response_text);
        case RewardKind::rule:
          return score_rule(std::get<RuleSpec>(spec.payload), response_text);
        case RewardKind::numeric:
          return score_numeric(std::get<NumericSpec>(spec.payload), response_text);
        case RewardKind::llm_judge:
          return score_judge(std::get<LlmJudgeSpec>(spec.payload), response_text, example);
        case RewardKind::external:
          return score_external(std::get<ExternalSpec>(spec.payload), response_text, example);
      }
      return unparsable("unhandled reward kind");
    } catch (const std::exception& e) {
      return unparsable(std::string("scoring fault: ") + e.what());
    }
  }

 private:
  static Scored unparsable(std::string detail) {
    return Scored{0.0, std::string(errc_name(Errc::unparsable_response)) + ": " + std::move(detail)};
  }

  static Scored score_exact(const ExactMatchSpec& spec, const std::string& response) {
    const std::string candidate =
        normalize_answer(extract_final_answer(response, RewardKind::exact_match));
    if (candidate.empty()) return unparsable("no answer candidate in response");
    return Scored{candidate == normalize_answer(spec.gold) ? 1.0 : 0.0, std::nullopt};
  }

  static Scored score_choice(const MultipleChoiceSpec& spec, const std::string& response) {
    const std::string raw = extract_final_answer(response, RewardKind::multiple_choice);
    const std::string candidate = normalize_answer(raw);
    if (candidate.empty()) return unparsable("no choice candidate in response");

    const auto letter_of = [&](const std::string& normalized) -> std::optional<char> {
      if (normalized.size() == 1 && std::isalpha(static_cast<unsigned char>(normalized[0])))
        return static_cast<char>(std::toupper(static_cast<unsigned char>(normalized[0])));
      for (std::size_t i = 0; i < spec.choices.size(); ++i)
        if (normalized == normalize_answer(spec.choices[i]))
          return static_cast<char>('A' + i);
      return std::nullopt;
    };

    const std::optional<char> gold_letter = letter_of(normalize_answer(spec.gold));
    std::optional<char> candidate_letter = letter_of(candidate);
    if (!candidate_letter) {
      candidate_letter = detail::last_bare_letter(raw, spec.choices.size());
      if (!candidate_letter)
        candidate_letter = detail::last_bare_letter(response, spec.choices.size());
    }
    if (gold_letter && candidate_letter)
      return Scored{*gold_letter == *candidate_letter ? 1.0 : 0.0, std::nullopt};
    return Scored{candidate == normalize_answer(spec.gold) ? 1.0 : 0.0, std::nullopt};
  }

  static Scored score_rule(const RuleSpec& spec, const std::string& response) {
    Result<bool> verdict = evaluate_rule(spec.expr, response);
    if (!verdict.ok()) return unparsable(verdict.error().message);
    return Scored{verdict.value() ? 1.0 : 0.0, std::nullopt};
  }

  static Scored score_numeric(const NumericSpec& spec, const std::string& response) {
    const std::string candidate = extract_final_answer(response, RewardKind::numeric);
    if (candidate.empty()) return unparsable("no number in response");
    const std::optional<double> value = last_number(candidate);
    if (!value) return unparsable("no number in response");
    return Scored{std::fabs(*value - spec.gold) <= spec.tolerance ? 1.0 : 0.0, std::nullopt};
  }

  Scored score_judge(const LlmJudgeSpec& spec, const std::string& response,
                     const Example& example) const {
    ChatRequest request;
    request.role_tag = RoleTag::judge;
    request.system_text = "You are a strict grader.";
    request.user_text = render_template(judge_template_, {{"question", example.target_query},
                                                          {"gold_answer", spec.gold},
                                                          {"response", response}});
    request.decode.temperature = 0.0;
    request.decode.max_tokens = 64;
    Result<ChatResponse> verdict = gateway_->complete(request);
    if (!verdict.ok())
      return Scored{0.0, "judge unavailable: " + verdict.error().message};
    return Scored{parse_judge_verdict(verdict.value().text), std::nullopt};
  }

  Result<Scored> score_external(const ExternalSpec& spec, const std::string& response,
                                const Example& example) const {
    auto it = verifiers_.find(spec.verifier_id);
    if (it == verifiers_.end())
      return make_error(Errc::unknown_external_verifier,
                        "no external verifier registered for id " + spec.verifier_id);
    Result<double> value = it->second(spec.params, response, example);
    if (!value.ok()) return Scored{0.0, "external verifier failed: " + value.error().message};
    return Scored{std::clamp(value.value(), 0.0, 1.0), std::nullopt};
  }

  std::shared_ptr<Gateway> gateway_;
  std::string judge_template_;
  std::map<std::string, ExternalVerifier> verifiers_;
};

}  // namespace clue
