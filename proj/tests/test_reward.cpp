// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <memory>
#include <random>

#include "clue/reward.hpp"
#include "clue/scripted.hpp"
#include "helpers.hpp"

using namespace clue;
using clue_test::make_example;

namespace {

constexpr const char* kJudgeTemplate =
    "Question: {question}\nReference: {gold_answer}\nResponse: {response}\nVerdict:";

struct Engine {
  std::shared_ptr<ScriptedBackend> backend = std::make_shared<ScriptedBackend>();
  std::shared_ptr<Gateway> gateway = std::make_shared<Gateway>(backend);
  RewardEngine rewards{gateway, kJudgeTemplate};
};

RewardSpec exact(const std::string& gold) {
  RewardSpec spec;
  spec.payload = ExactMatchSpec{gold};
  return spec;
}

}  // namespace

TEST_CASE("normalize_answer canonicalizes emphasis, whitespace, punctuation, case") {
  CHECK(normalize_answer("  **Blue**  ") == "blue");
  CHECK(normalize_answer("`Paris`.") == "paris");
  CHECK(normalize_answer("A_B_C") == "abc");
  CHECK(normalize_answer("the  answer\t is\nhere") == "the answer is here");
  CHECK(normalize_answer("done!?;:,.") == "done");
  CHECK(normalize_answer("...") == "");
  CHECK(normalize_answer("") == "");
  CHECK(normalize_answer("42.") == "42");
  CHECK(normalize_answer("1.5") == "1.5");  // inner decimal point survives
}

TEST_CASE("answer markers dominate and the last one wins") {
  CHECK(extract_final_answer("Answer: 42", RewardKind::exact_match) == "42");
  CHECK(extract_final_answer("answer= blue whale", RewardKind::exact_match) == "blue whale");
  CHECK(extract_final_answer("ANSWER  :  shouted", RewardKind::exact_match) == "shouted");
  CHECK(extract_final_answer("Answer: 1\nsome prose\nFinal answer: 2", RewardKind::exact_match) ==
        "2");
  // Marker ends its line: the next non-empty line is the answer.
  CHECK(extract_final_answer("The answer:\n\n  Paris  \nextra", RewardKind::exact_match) ==
        "Paris");
  // Marker present but nothing after it anywhere: empty candidate, not fallback.
  CHECK(extract_final_answer("content above\nAnswer:", RewardKind::exact_match) == "");
  // "answers" is not a marker (word boundary on both sides of the separator).
  CHECK(extract_final_answer("many answers: 1 2 3\nlast line", RewardKind::exact_match) ==
        "last line");
  CHECK(extract_final_answer("myanswer: 5\nreal last", RewardKind::exact_match) == "real last");
}

TEST_CASE("boxed and bold emphasis are the second tier") {
  CHECK(extract_final_answer("Thus \\boxed{17} holds.", RewardKind::exact_match) == "17");
  CHECK(extract_final_answer("so \\boxed{\\frac{1}{2}} wins", RewardKind::exact_match) ==
        "\\frac{1}{2}");
  CHECK(extract_final_answer("early \\boxed{1} then \\boxed{2}", RewardKind::exact_match) == "2");
  CHECK(extract_final_answer("It is **blue**.\nmore text", RewardKind::exact_match) == "blue");
  CHECK(extract_final_answer("**a** and then **b**", RewardKind::exact_match) == "b");
  // Bold pairs are formed sequentially; an empty pair is skipped.
  CHECK(extract_final_answer("**x** and ****", RewardKind::exact_match) == "x");
  // An unpaired ** is not emphasis at all.
  CHECK(extract_final_answer("** dangling\nfallback line", RewardKind::exact_match) ==
        "fallback line");
  // Markers outrank emphasis even when the marker appears first.
  CHECK(extract_final_answer("Answer: 2\nlater \\boxed{9}", RewardKind::exact_match) == "2");
  // Boxed outranks bold.
  CHECK(extract_final_answer("**bold** then \\boxed{boxed}", RewardKind::exact_match) == "boxed");
}

TEST_CASE("the last non-empty line is the final fallback") {
  CHECK(extract_final_answer("first\nsecond\n\n   \n", RewardKind::exact_match) == "second");
  CHECK(extract_final_answer("only", RewardKind::exact_match) == "only");
  CHECK(extract_final_answer("\n  \n", RewardKind::exact_match) == "");
  CHECK(extract_final_answer("", RewardKind::exact_match) == "");
}

TEST_CASE("numeric extraction reduces the candidate to its last number") {
  CHECK(extract_final_answer("Answer: 42 apples", RewardKind::numeric) == "42");
  CHECK(extract_final_answer("3 then 4\nfinal line 5 and 6", RewardKind::numeric) == "6");
  // Candidate has no number: fall back to the last number anywhere.
  CHECK(extract_final_answer("value is 17\nAnswer: none of these", RewardKind::numeric) == "17");
  CHECK(extract_final_answer("no digits anywhere", RewardKind::numeric) == "");
  CHECK(extract_final_answer("Answer: -2.5", RewardKind::numeric) == "-2.5");
}

TEST_CASE("judge verdict grammar: first decisive word wins") {
  CHECK(parse_judge_verdict("Yes") == 1.0);
  CHECK(parse_judge_verdict("yes.") == 1.0);
  CHECK(parse_judge_verdict("The response is CORRECT") == 1.0);
  CHECK(parse_judge_verdict("No") == 0.0);
  CHECK(parse_judge_verdict("Incorrect, sadly") == 0.0);
  CHECK(parse_judge_verdict("Yes, although partly no") == 1.0);
  CHECK(parse_judge_verdict("no, but arguably yes") == 0.0);
  CHECK(parse_judge_verdict("maybe?") == 0.0);
  CHECK(parse_judge_verdict("") == 0.0);
  // "yesterday" must not match "yes" (whole-word matching).
  CHECK(parse_judge_verdict("yesterday it seemed correct") == 1.0);
  CHECK(parse_judge_verdict("yesterday it rained") == 0.0);
}

TEST_CASE("rule trees evaluate recursively") {
  CHECK(evaluate_rule(json{{"contains", "Hello"}}, "well hello there").value());
  CHECK_FALSE(evaluate_rule(json{{"contains", "absent"}}, "text").value());
  CHECK(evaluate_rule(json{{"regex", "^[0-9]+ apples$"}}, "12 apples").value());
  CHECK_FALSE(evaluate_rule(json{{"regex", "^x"}}, "yx").value());

  json tree{{"all_of", json::array({json{{"contains", "a"}},
                                    json{{"any_of", json::array({json{{"contains", "zz"}},
                                                                 json{{"regex", "b+"}}})}}})}};
  CHECK(evaluate_rule(tree, "a bb").value());
  CHECK_FALSE(evaluate_rule(tree, "a cc").value());

  // Vacuous truths.
  CHECK(evaluate_rule(json{{"all_of", json::array()}}, "x").value());
  CHECK_FALSE(evaluate_rule(json{{"any_of", json::array()}}, "x").value());

  // Malformed trees are parse errors, not scores.
  CHECK_FALSE(evaluate_rule(json{{"glob", "*"}}, "x").ok());
  CHECK_FALSE(evaluate_rule(json::array({1}), "x").ok());
  CHECK_FALSE(evaluate_rule(json{{"contains", "a"}, {"regex", "b"}}, "x").ok());
  CHECK_FALSE(evaluate_rule(json{{"contains", 7}}, "x").ok());
  CHECK_FALSE(evaluate_rule(json{{"regex", "("}}, "x").ok());
}

TEST_CASE("exact match scoring normalizes both sides") {
  Engine e;
  Example ex = make_example("t", "d", "Blue");
  auto hit = e.rewards.score(exact("Blue"), "Answer: **blue**.", ex);
  REQUIRE(hit.ok());
  CHECK(hit->reward == 1.0);
  CHECK_FALSE(hit->diagnostic.has_value());

  auto miss = e.rewards.score(exact("Blue"), "Answer: red", ex);
  CHECK(miss->reward == 0.0);
  CHECK_FALSE(miss->diagnostic.has_value());  // a wrong answer is not malformed

  auto empty = e.rewards.score(exact("Blue"), "\n\n", ex);
  CHECK(empty->reward == 0.0);
  REQUIRE(empty->diagnostic.has_value());
  CHECK(empty->diagnostic->find("UnparsableResponse") == 0);
}

TEST_CASE("multiple choice accepts letters, full answers, and bare-letter fallback") {
  Engine e;
  Example ex = make_example("t", "d", "C");
  RewardSpec spec;
  spec.payload = MultipleChoiceSpec{"C", {"red", "green", "blue", "yellow"}};

  CHECK(e.rewards.score(spec, "Answer: C", ex)->reward == 1.0);
  CHECK(e.rewards.score(spec, "Answer: c.", ex)->reward == 1.0);
  CHECK(e.rewards.score(spec, "Answer: blue", ex)->reward == 1.0);  // third choice = C
  CHECK(e.rewards.score(spec, "Answer: red", ex)->reward == 0.0);
  // No direct letter: the last standalone uppercase letter in range decides.
  CHECK(e.rewards.score(spec, "Either B or on reflection C seems right\nso that one", ex)->reward ==
        1.0);
  // Lowercase articles never trigger the fallback.
  CHECK(e.rewards.score(spec, "a tricky one; I pick B\nfinal thoughts", ex)->reward == 0.0);
  // Letters beyond the choice range are ignored by the fallback.
  RewardSpec two;
  two.payload = MultipleChoiceSpec{"B", {"x", "y"}};
  CHECK(e.rewards.score(two, "maybe Z, no: B\nhmm", ex)->reward == 1.0);

  SECTION("gold may be the full answer text") {
    RewardSpec text_gold;
    text_gold.payload = MultipleChoiceSpec{"blue", {"red", "green", "blue"}};
    CHECK(e.rewards.score(text_gold, "Answer: C", ex)->reward == 1.0);
    CHECK(e.rewards.score(text_gold, "Answer: blue", ex)->reward == 1.0);
  }
  SECTION("without a choice list, plain normalized comparison applies") {
    RewardSpec free;
    free.payload = MultipleChoiceSpec{"C", {}};
    CHECK(e.rewards.score(free, "Answer: C", ex)->reward == 1.0);
    CHECK(e.rewards.score(free, "Answer: D", ex)->reward == 0.0);
  }
}

TEST_CASE("numeric scoring applies the tolerance to the last number") {
  Engine e;
  Example ex = make_example("t", "d", "17");
  RewardSpec spec;
  spec.payload = NumericSpec{17.0, 0.5};
  CHECK(e.rewards.score(spec, "I compute 16.8 in the end", ex)->reward == 1.0);
  CHECK(e.rewards.score(spec, "it is 16.4", ex)->reward == 0.0);
  CHECK(e.rewards.score(spec, "Answer: 17", ex)->reward == 1.0);

  auto none = e.rewards.score(spec, "no figures here", ex);
  CHECK(none->reward == 0.0);
  REQUIRE(none->diagnostic.has_value());
  CHECK(none->diagnostic->find("UnparsableResponse") == 0);
}

TEST_CASE("rule scoring folds malformed trees to zero with a diagnostic") {
  Engine e;
  Example ex = make_example("t", "d", "x");
  RewardSpec good;
  good.payload = RuleSpec{json{{"contains", "paris"}}};
  CHECK(e.rewards.score(good, "Paris of course", ex)->reward == 1.0);

  RewardSpec bad;
  bad.payload = RuleSpec{json{{"frobnicate", 1}}};
  auto scored = e.rewards.score(bad, "anything", ex);
  REQUIRE(scored.ok());  // totality: not a hard error
  CHECK(scored->reward == 0.0);
  REQUIRE(scored->diagnostic.has_value());
}

TEST_CASE("llm judge renders the template and parses the verdict") {
  Engine e;
  std::string seen_system, seen_user;
  double seen_temperature = -1.0;
  int seen_max_tokens = -1;
  e.backend->set_handler(RoleTag::judge, [&](const ChatRequest& r) {
    seen_system = r.system_text;
    seen_user = r.user_text;
    seen_temperature = r.decode.temperature;
    seen_max_tokens = r.decode.max_tokens;
    return std::string("Yes, matches the reference.");
  });

  Example ex = make_example("t", "d", "Rome");
  RewardSpec spec;
  spec.payload = LlmJudgeSpec{"Rome"};
  auto scored = e.rewards.score(spec, "It was Rome.", ex);
  REQUIRE(scored.ok());
  CHECK(scored->reward == 1.0);
  CHECK(seen_system == "You are a strict grader.");
  CHECK(seen_user.find("Question: what is my favourite color?") != std::string::npos);
  CHECK(seen_user.find("Reference: Rome") != std::string::npos);
  CHECK(seen_user.find("Response: It was Rome.") != std::string::npos);
  CHECK(seen_temperature == 0.0);
  CHECK(seen_max_tokens == 64);
  CHECK(e.gateway->usage().judge_llm_calls == 1);

  SECTION("an unavailable judge folds to zero with a diagnostic") {
    Engine isolated;  // judge role never configured
    auto r = isolated.rewards.score(spec, "It was Rome.", ex);
    REQUIRE(r.ok());
    CHECK(r->reward == 0.0);
    REQUIRE(r->diagnostic.has_value());
    CHECK(r->diagnostic->find("judge unavailable") != std::string::npos);
  }
}

TEST_CASE("external verifiers may return fractional rewards; unknown ids are hard errors") {
  Engine e;
  e.rewards.register_verifier("half", [](const json&, const std::string&, const Example&) {
    return Result<double>(0.5);
  });
  e.rewards.register_verifier("overshoot", [](const json&, const std::string&, const Example&) {
    return Result<double>(1.7);
  });
  e.rewards.register_verifier("broken", [](const json&, const std::string&, const Example&) {
    return Result<double>(make_error(Errc::io_error, "db down"));
  });

  Example ex = make_example("t", "d", "x");
  RewardSpec spec;
  spec.payload = ExternalSpec{"half", json{}};
  CHECK(e.rewards.score(spec, "whatever", ex)->reward == 0.5);

  spec.payload = ExternalSpec{"overshoot", json{}};
  CHECK(e.rewards.score(spec, "whatever", ex)->reward == 1.0);  // clamped

  spec.payload = ExternalSpec{"broken", json{}};
  auto broken = e.rewards.score(spec, "whatever", ex);
  REQUIRE(broken.ok());
  CHECK(broken->reward == 0.0);
  REQUIRE(broken->diagnostic.has_value());

  spec.payload = ExternalSpec{"ghost", json{}};
  auto ghost = e.rewards.score(spec, "whatever", ex);
  REQUIRE_FALSE(ghost.ok());
  CHECK(ghost.error().code == Errc::unknown_external_verifier);
}

TEST_CASE("scoring is total over hostile inputs") {
  Engine e;
  e.backend->set_default_response(RoleTag::judge, "no");
  Example ex = make_example("t", "d", "gold");

  std::vector<RewardSpec> specs(5);
  specs[0].payload = ExactMatchSpec{"gold"};
  specs[1].payload = MultipleChoiceSpec{"B", {"x", "gold", "z"}};
  specs[2].payload = RuleSpec{json{{"contains", "gold"}}};
  specs[3].payload = NumericSpec{4.0, 0.1};
  specs[4].payload = LlmJudgeSpec{"gold"};

  std::mt19937_64 rng(99);
  const std::string alphabet = "ab*{}\\_:=.\n **Answer:болd\t\"[]()0123456789eE-+";
  for (int i = 0; i < 200; ++i) {
    std::string noise;
    const std::size_t len = rng() % 80;
    for (std::size_t c = 0; c < len; ++c)
      noise.push_back(alphabet[rng() % alphabet.size()]);
    for (const auto& spec : specs) {
      auto scored = e.rewards.score(spec, noise, ex);
      REQUIRE(scored.ok());
      CHECK(scored->reward >= 0.0);
      CHECK(scored->reward <= 1.0);
      if (scored->reward != 0.0 && scored->reward != 1.0)
        FAIL("built-in rewards must be binary");
    }
  }
}
