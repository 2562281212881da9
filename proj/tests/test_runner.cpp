// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <memory>

#include "clue/runner.hpp"
#include "clue/scripted.hpp"
#include "helpers.hpp"

using namespace clue;
using clue_test::make_conversation;
using clue_test::make_example;
using clue_test::make_prompt;
using clue_test::TempDir;

namespace {

constexpr const char* kGenTemplate = "Memory:\n{memory_block}\n\nQuestion: {query}\nAnswer:";

struct Rig {
  TempDir dir{"runner"};
  std::shared_ptr<ScriptedBackend> backend = std::make_shared<ScriptedBackend>();
  std::shared_ptr<Gateway> gateway = std::make_shared<Gateway>(backend);
  std::shared_ptr<RewardEngine> rewards = std::make_shared<RewardEngine>(gateway, "judge {response}");
  std::shared_ptr<LogStore> logs = std::make_shared<LogStore>(dir.path());
  std::shared_ptr<Runner> runner;

  explicit Rig(RunnerOptions options = {}) {
    runner = std::make_shared<Runner>(gateway, rewards, logs, kGenTemplate, options);
  }
};

}  // namespace

TEST_CASE("extraction input rendering is byte-exact") {
  Conversation c = make_conversation("hi", "hello");
  CHECK(render_extraction_input(c) ==
        "<conversation>\n<user>hi</user>\n<assistant>hello</assistant>\n</conversation>");

  Conversation multi;
  multi.messages = {{Role::system, "be brief"}, {Role::user, "q"}, {Role::tool, "result"}};
  CHECK(render_extraction_input(multi) ==
        "<conversation>\n<system>be brief</system>\n<user>q</user>\n<tool>result</tool>\n"
        "</conversation>");

  Example e = make_example("t", "d", "blue");
  CHECK(render_extraction_input(e) == render_extraction_input(e.source_conversation));
}

TEST_CASE("numbered list parsing") {
  SECTION("plain items with dot or paren markers") {
    auto items = parse_numbered_list("1. first fact\n2) second fact\n10. tenth");
    REQUIRE(items.size() == 3);
    CHECK(items[0] == "first fact");
    CHECK(items[1] == "second fact");
    CHECK(items[2] == "tenth");
  }
  SECTION("continuation lines join with a space") {
    auto items = parse_numbered_list("1. a long fact\n   that continues\n2. next");
    REQUIRE(items.size() == 2);
    CHECK(items[0] == "a long fact that continues");
    CHECK(items[1] == "next");
  }
  SECTION("prose before the first item is dropped") {
    auto items = parse_numbered_list("Here are the facts:\n1. only one");
    REQUIRE(items.size() == 1);
    CHECK(items[0] == "only one");
  }
  SECTION("no numbered lines: the whole reply is one item") {
    auto items = parse_numbered_list("The user likes blue.\nNothing else.");
    REQUIRE(items.size() == 1);
    CHECK(items[0] == "The user likes blue.\nNothing else.");
  }
  SECTION("whitespace-only input yields no items") {
    CHECK(parse_numbered_list("  \n \t ").empty());
    CHECK(parse_numbered_list("").empty());
  }
  SECTION("a marker requires trailing whitespace: versions like 1.5 stay prose") {
    auto items = parse_numbered_list("version 1.5 is out");
    REQUIRE(items.size() == 1);
    CHECK(items[0] == "version 1.5 is out");
  }
}

TEST_CASE("memory block rendering uses the sentinel when empty") {
  MemorySet none;
  CHECK(render_memory_block(none) == "(no memory)");
  CHECK(render_memory_block(none) == std::string(kNoMemorySentinel));

  MemorySet two;
  two.items = {"likes blue", "born in May"};
  CHECK(render_memory_block(two) == "1. likes blue\n2. born in May");
}

TEST_CASE("extract_memory sends the prompt as system and the rendering as user") {
  Rig rig;
  std::string seen_system, seen_user;
  rig.backend->set_handler(RoleTag::extractor, [&](const ChatRequest& r) {
    seen_system = r.system_text;
    seen_user = r.user_text;
    return std::string("  1. likes blue\n2. lives in Oslo  ");
  });

  Example e = make_example("t1", "d", "blue");
  auto memory = rig.runner->extract_memory(make_prompt("p", "Extract key facts."), e);
  REQUIRE(memory.ok());
  CHECK(seen_system == "Extract key facts.");
  CHECK(seen_user == render_extraction_input(e));
  CHECK(memory->raw_text == "1. likes blue\n2. lives in Oslo");  // trimmed
  REQUIRE(memory->items.size() == 2);
  CHECK(memory->items[1] == "lives in Oslo");
  CHECK(rig.gateway->usage().extraction_llm_calls == 1);
}

TEST_CASE("answer_with_memory renders the generation template or the bare query") {
  Rig rig;
  std::string seen_system, seen_user;
  rig.backend->set_handler(RoleTag::generator, [&](const ChatRequest& r) {
    seen_system = r.system_text;
    seen_user = r.user_text;
    return std::string("blue");
  });

  Example e = make_example("t1", "d", "blue");
  MemorySet memory;
  memory.items = {"likes blue"};

  auto with = rig.runner->answer_with_memory(e, memory);
  REQUIRE(with.ok());
  CHECK(seen_system == std::string(kGeneratorSystemText));
  CHECK(seen_user ==
        "Memory:\n1. likes blue\n\nQuestion: what is my favourite color?\nAnswer:");
  REQUIRE(with->target_conversation.messages.size() == 2);
  CHECK(with->target_conversation.messages[0].role == Role::user);
  CHECK(with->target_conversation.messages[0].content == seen_user);
  CHECK(with->target_conversation.messages[1].content == "blue");

  auto bare = rig.runner->answer_with_memory(e, memory, PairMode::no_memory);
  REQUIRE(bare.ok());
  CHECK(seen_user == e.target_query);  // no template, no memory leakage

  SECTION("empty extraction renders the sentinel, like the baseline prompt body") {
    MemorySet none;
    REQUIRE(rig.runner->answer_with_memory(e, none).ok());
    CHECK(seen_user == "Memory:\n(no memory)\n\nQuestion: what is my favourite color?\nAnswer:");
  }
}

TEST_CASE("run_pair is total: stage failures score zero, log still persisted") {
  Example e = make_example("t1", "d", "blue");
  PromptCandidate p = make_prompt("p", "Extract.");

  SECTION("extraction failure") {
    Rig rig;  // extractor role unconfigured
    PairLog log = rig.runner->run_pair(p, e, 0);
    CHECK(log.target_reward == 0.0);
    REQUIRE(log.diagnostic.has_value());
    CHECK(log.diagnostic->find("extraction failed:") == 0);
    CHECK(rig.logs->read("t1", 0, "p").ok());  // persisted despite the failure
  }
  SECTION("generation failure") {
    Rig rig;
    rig.backend->set_default_response(RoleTag::extractor, "1. fact");
    PairLog log = rig.runner->run_pair(p, e, 0);
    CHECK(log.target_reward == 0.0);
    REQUIRE(log.diagnostic.has_value());
    CHECK(log.diagnostic->find("generation failed:") == 0);
    CHECK(log.extracted_memory.items.size() == 1);  // extraction result kept
  }
  SECTION("unparsable answers keep the scoring diagnostic") {
    Rig rig;
    rig.backend->set_default_response(RoleTag::extractor, "1. fact");
    // Non-empty reply whose final line normalizes away to nothing.
    rig.backend->set_default_response(RoleTag::generator, "The logs are unclear.\n...");
    PairLog log = rig.runner->run_pair(p, e, 0);
    CHECK(log.target_reward == 0.0);
    REQUIRE(log.diagnostic.has_value());
    CHECK(log.diagnostic->find("UnparsableResponse") != std::string::npos);
  }
  SECTION("success records reward and both conversations") {
    Rig rig;
    rig.backend->set_default_response(RoleTag::extractor, "1. favourite color blue");
    rig.backend->set_default_response(RoleTag::generator, "Answer: blue");
    PairLog log = rig.runner->run_pair(p, e, 3);
    CHECK(log.target_reward == 1.0);
    CHECK_FALSE(log.diagnostic.has_value());
    CHECK(log.round == 3);
    CHECK(log.target_conversation.messages.size() == 2);
    auto persisted = rig.logs->read("t1", 3, "p");
    REQUIRE(persisted.ok());
    CHECK(persisted->target_reward == 1.0);
  }
}

TEST_CASE("the no-memory baseline never touches the extractor") {
  Rig rig;
  rig.backend->set_default_response(RoleTag::generator, "Answer: blue");
  PairLog log = rig.runner->run_pair(make_prompt("no_memory", "(baseline)"),
                                     make_example("t1", "d", "blue"), 0, 0, PairMode::no_memory);
  CHECK(log.target_reward == 1.0);
  CHECK(rig.gateway->usage().extraction_llm_calls == 0);
  CHECK(rig.gateway->usage().evaluation_calls == 1);
  CHECK(log.extracted_memory.items.empty());
}

TEST_CASE("evaluate_prompt accounting: examples x repetitions, split per dataset") {
  Rig rig;
  rig.backend->set_default_response(RoleTag::extractor, "1. favourite color blue");
  rig.backend->add_contains_rule(RoleTag::generator, "color", "Answer: blue");
  rig.backend->set_default_response(RoleTag::generator, "Answer: wrong");

  std::vector<Example> examples{make_example("a1", "ds_a", "blue"),
                                make_example("a2", "ds_a", "blue"),
                                make_example("b1", "ds_b", "red")};
  examples[0].category = Category::personalization;
  examples[1].category = Category::personalization;
  examples[2].category = Category::agentic;

  EvalReport report = rig.runner->evaluate_prompt(make_prompt("p", "Extract."), examples, 3);

  CHECK(report.prompt_id == "p");
  CHECK(report.usage.evaluation_calls == 9);   // 3 examples x 3 repetitions
  CHECK(report.usage.extraction_llm_calls == 9);
  CHECK(report.usage.optimization_llm_calls == 0);
  REQUIRE(report.per_dataset.count("ds_a") == 1);
  REQUIRE(report.per_dataset.count("ds_b") == 1);

  const DatasetStats& a = report.per_dataset.at("ds_a");
  CHECK(a.mean_reward == 1.0);  // both ds_a queries mention "color" -> blue
  CHECK(a.n_examples == 2);
  CHECK(a.n_repetitions == 3);
  CHECK(a.rep_std == 0.0);
  REQUIRE(a.category.has_value());
  CHECK(*a.category == Category::personalization);

  const DatasetStats& b = report.per_dataset.at("ds_b");
  CHECK(b.mean_reward == 0.0);  // rule still answers blue, but ds_b expects red
  CHECK(report.macro_accuracy == 0.5);  // unweighted mean over {1.0, 0.0}

  SECTION("per-repetition logs are persisted under distinct attempts") {
    CHECK(rig.logs->list(0, "p").size() == 9);
    CHECK(rig.logs->read("a1", 0, "p", 2).ok());
  }
}

TEST_CASE("evaluate_prompt reports only its own usage delta") {
  Rig rig;
  rig.backend->set_default_response(RoleTag::extractor, "1. x");
  rig.backend->set_default_response(RoleTag::generator, "Answer: blue");
  // Unrelated traffic before the evaluation must not leak into the report.
  ChatRequest noise;
  noise.role_tag = RoleTag::summarizer;
  noise.system_text = "s";
  noise.user_text = "u";
  rig.backend->set_default_response(RoleTag::summarizer, "noise");
  REQUIRE(rig.gateway->complete(noise).ok());

  EvalReport report = rig.runner->evaluate_prompt(make_prompt("p", "Extract."),
                                                  {make_example("t1", "d", "blue")}, 2);
  CHECK(report.usage.optimization_llm_calls == 0);
  CHECK(report.usage.evaluation_calls == 2);
  CHECK(report.usage.extraction_llm_calls == 2);
}

TEST_CASE("repetition std reflects variance across repetition means") {
  RunnerOptions sequential;
  sequential.max_in_flight = 1;  // scripts consumed in flat (rep-major) order
  Rig rig(sequential);
  rig.backend->set_default_response(RoleTag::extractor, "1. x");
  rig.backend->push_script(RoleTag::generator, "Answer: blue");   // rep 0: right
  rig.backend->push_script(RoleTag::generator, "Answer: red");    // rep 1: wrong
  rig.backend->set_default_response(RoleTag::generator, "Answer: red");

  EvalReport report = rig.runner->evaluate_prompt(make_prompt("p", "Extract."),
                                                  {make_example("t1", "d", "blue")}, 2);
  const DatasetStats& stats = report.per_dataset.at("d");
  CHECK(stats.mean_reward == 0.5);
  CHECK_THAT(stats.rep_std, Catch::Matchers::WithinAbs(0.5, 1e-12));  // rep means 1 and 0
}

TEST_CASE("parallelism level never changes the reported numbers") {
  auto run_with = [](std::size_t max_in_flight) {
    RunnerOptions options;
    options.max_in_flight = max_in_flight;
    Rig rig(options);
    rig.backend->set_default_response(RoleTag::extractor, "1. favourite color blue");
    rig.backend->add_contains_rule(RoleTag::generator, "color", "Answer: blue");
    std::vector<Example> examples;
    for (int i = 0; i < 6; ++i)
      examples.push_back(make_example("t" + std::to_string(i), i % 2 ? "even" : "odd", "blue"));
    return rig.runner->evaluate_prompt(make_prompt("p", "Extract."), examples, 2);
  };

  EvalReport serial = run_with(1);
  EvalReport wide = run_with(8);
  CHECK(serial.macro_accuracy == wide.macro_accuracy);
  REQUIRE(serial.per_dataset.size() == wide.per_dataset.size());
  for (const auto& [dataset_id, stats] : serial.per_dataset) {
    const DatasetStats& other = wide.per_dataset.at(dataset_id);
    CHECK(stats.mean_reward == other.mean_reward);
    CHECK(stats.rep_std == other.rep_std);
    CHECK(stats.n_examples == other.n_examples);
  }
  CHECK(serial.usage.evaluation_calls == wide.usage.evaluation_calls);
}
