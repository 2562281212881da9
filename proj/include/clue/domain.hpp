// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/result.hpp"
#include "clue/text.hpp"

namespace clue {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Conversations

enum class Role { system, user, assistant, tool };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

inline Result<Role> role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  if (s == "tool") return Role::tool;
  return make_error(Errc::parse_error, "unknown role: " + std::string(s));
}

struct Message {
  Role role = Role::user;
  std::string content;
};

struct Conversation {
  std::vector<Message> messages;
};

inline Result<void> validate(const Message& m) {
  if (trim(m.content).empty()) return make_error(Errc::invalid_example, "message content empty");
  return ok_result();
}

inline Result<void> validate(const Conversation& c) {
  if (c.messages.empty()) return make_error(Errc::invalid_example, "conversation has no messages");
  for (const auto& m : c.messages) {
    if (auto r = validate(m); !r.ok()) return r;
  }
  return ok_result();
}

// ---------------------------------------------------------------------------
// Reward specifications

enum class RewardKind { exact_match, multiple_choice, rule, numeric, llm_judge, external };

inline const char* reward_kind_name(RewardKind k) {
  switch (k) {
    case RewardKind::exact_match: return "exact_match";
    case RewardKind::multiple_choice: return "multiple_choice";
    case RewardKind::rule: return "rule";
    case RewardKind::numeric: return "numeric";
    case RewardKind::llm_judge: return "llm_judge";
    case RewardKind::external: return "external";
  }
  return "exact_match";
}

struct ExactMatchSpec {
  std::string gold;
};

struct MultipleChoiceSpec {
  std::string gold;                  // the correct choice token, e.g. "C"
  std::vector<std::string> choices;  // optional full choice set
};

struct RuleSpec {
  json expr;  // contains / regex / all_of / any_of expression tree
};

struct NumericSpec {
  double gold = 0.0;
  double tolerance = 0.0;
};

struct LlmJudgeSpec {
  std::string gold;  // reference answer shown to the judge
};

struct ExternalSpec {
  std::string verifier_id;
  json params;
};

struct RewardSpec {
  std::variant<ExactMatchSpec, MultipleChoiceSpec, RuleSpec, NumericSpec, LlmJudgeSpec,
               ExternalSpec>
      payload;

  RewardKind kind() const { return static_cast<RewardKind>(payload.index()); }
};

inline Result<void> validate(const RewardSpec& spec) {
  switch (spec.kind()) {
    case RewardKind::exact_match:
      if (std::get<ExactMatchSpec>(spec.payload).gold.empty())
        return make_error(Errc::invalid_example, "exact_match spec missing gold");
      break;
    case RewardKind::multiple_choice:
      if (std::get<MultipleChoiceSpec>(spec.payload).gold.empty())
        return make_error(Errc::invalid_example, "multiple_choice spec missing gold");
      break;
    case RewardKind::rule:
      if (std::get<RuleSpec>(spec.payload).expr.is_null())
        return make_error(Errc::invalid_example, "rule spec missing expr");
      break;
    case RewardKind::numeric:
      if (std::get<NumericSpec>(spec.payload).tolerance < 0.0)
        return make_error(Errc::invalid_example, "numeric tolerance must be >= 0");
      break;
    case RewardKind::llm_judge:
      if (std::get<LlmJudgeSpec>(spec.payload).gold.empty())
        return make_error(Errc::invalid_example, "llm_judge spec missing gold");
      break;
    case RewardKind::external:
      if (std::get<ExternalSpec>(spec.payload).verifier_id.empty())
        return make_error(Errc::invalid_example, "external spec missing verifier_id");
      break;
  }
  return ok_result();
}

// ---------------------------------------------------------------------------
// Examples and corpus

enum class Category { personalization, problem_solving, agentic };

inline const char* category_name(Category c) {
  switch (c) {
    case Category::personalization: return "personalization";
    case Category::problem_solving: return "problem_solving";
    case Category::agentic: return "agentic";
  }
  return "personalization";
}

inline Result<Category> category_from_string(std::string_view s) {
  if (s == "personalization") return Category::personalization;
  if (s == "problem_solving") return Category::problem_solving;
  if (s == "agentic") return Category::agentic;
  return make_error(Errc::parse_error, "unknown category: " + std::string(s));
}

struct Example {
  std::string task_id;
  std::string dataset_id;
  std::optional<Category> category;  // report grouping only, never shown to models
  Conversation source_conversation;
  std::string target_query;
  RewardSpec reward_spec;
};

inline Result<void> validate(const Example& e) {
  if (e.task_id.empty()) return make_error(Errc::invalid_example, "task_id empty");
  if (e.dataset_id.empty())
    return make_error(Errc::invalid_example, "task " + e.task_id + ": dataset_id empty");
  if (auto r = validate(e.source_conversation); !r.ok())
    return make_error(Errc::invalid_example, "task " + e.task_id + ": " + r.error().message);
  if (trim(e.target_query).empty())
    return make_error(Errc::invalid_example, "task " + e.task_id + ": target_query empty");
  if (auto r = validate(e.reward_spec); !r.ok())
    return make_error(Errc::invalid_example, "task " + e.task_id + ": " + r.error().message);
  return ok_result();
}

/// Validated list of examples in ingestion order with unique task ids.
struct Corpus {
  std::vector<Example> examples;

  const Example* find(const std::string& task_id) const {
    auto it = index_.find(task_id);
    return it == index_.end() ? nullptr : &examples[it->second];
  }

  static Result<Corpus> from_examples(std::vector<Example> examples);

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

inline Result<Corpus> Corpus::from_examples(std::vector<Example> examples) {
  if (examples.empty()) return make_error(Errc::invalid_example, "corpus is empty");
  Corpus corpus;
  corpus.examples = std::move(examples);
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    const Example& e = corpus.examples[i];
    if (auto r = validate(e); !r.ok()) return r.error();
    auto [it, inserted] = corpus.index_.emplace(e.task_id, i);
    if (!inserted) return make_error(Errc::duplicate_task_id, e.task_id);
  }
  return corpus;
}

inline Result<Corpus> validate_corpus(std::vector<Example> examples) {
  return Corpus::from_examples(std::move(examples));
}

// ---------------------------------------------------------------------------
// Extraction artifacts

struct MemorySet {
  std::vector<std::string> items;
  std::string raw_text;  // as returned by the extraction model
};

enum class Provenance { seed_asset, proposed };

struct PromptCandidate {
  std::string prompt_id;
  std::optional<std::string> parent_id;  // set iff provenance == proposed
  std::string text;
  Provenance provenance = Provenance::seed_asset;
  int round = 0;
  std::optional<std::string> rationale;
};

inline Result<void> validate(const PromptCandidate& p) {
  if (p.prompt_id.empty()) return make_error(Errc::invalid_example, "prompt_id empty");
  if (p.text.empty()) return make_error(Errc::invalid_example, "prompt text empty");
  if (p.round < 0) return make_error(Errc::invalid_example, "prompt round negative");
  const bool proposed = p.provenance == Provenance::proposed;
  if (proposed != p.parent_id.has_value())
    return make_error(Errc::invalid_example, "parent_id must be set iff provenance is proposed");
  return ok_result();
}

struct PairLog {
  std::string task_id;
  std::string dataset_id;
  std::string prompt_id;
  int round = 0;
  Conversation source_conversation;
  MemorySet extracted_memory;
  Conversation target_conversation;
  double target_reward = 0.0;
  std::optional<std::string> summary;
  std::optional<std::string> diagnostic;  // set when a stage failed and reward was forced to 0
};

inline Result<void> validate(const PairLog& log) {
  if (log.task_id.empty()) return make_error(Errc::invalid_example, "pair log task_id empty");
  if (log.prompt_id.empty()) return make_error(Errc::invalid_example, "pair log prompt_id empty");
  if (!(log.target_reward >= 0.0 && log.target_reward <= 1.0))
    return make_error(Errc::invalid_example,
                      "pair log reward out of [0,1]: " + format_number(log.target_reward));
  return ok_result();
}

// ---------------------------------------------------------------------------
// Clusters

struct Cluster {
  std::string cluster_id;
  std::string label;
  std::string description;
  std::set<std::string> task_ids;
};

struct ClusterPool {
  std::vector<Cluster> clusters;
  int round_updated = 0;

  bool empty() const { return clusters.empty(); }
  const Cluster* find(const std::string& cluster_id) const {
    for (const auto& c : clusters)
      if (c.cluster_id == cluster_id) return &c;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Reports and usage accounting

struct DatasetStats {
  double mean_reward = 0.0;
  int n_examples = 0;
  int n_repetitions = 1;
  double rep_std = 0.0;                  // std dev of per-repetition dataset means
  std::optional<Category> category;  // carried so stored reports can render grouped tables
};

struct UsageCounters {
  long optimization_llm_calls = 0;  // summarizer + cluster manager + analyzer + proposer
  long evaluation_calls = 0;        // generator target-query answers
  long extraction_llm_calls = 0;    // extractor calls (neither of the two above)
  long judge_llm_calls = 0;         // llm-judge scoring calls
  std::chrono::milliseconds wall_time{0};

  long total_llm_calls() const {
    return optimization_llm_calls + evaluation_calls + extraction_llm_calls + judge_llm_calls;
  }
};

struct EvalReport {
  std::string prompt_id;
  std::map<std::string, DatasetStats> per_dataset;
  double macro_accuracy = 0.0;
  std::optional<double> relative_gain;
  std::optional<std::string> base_prompt_id;
  std::vector<std::string> excluded_datasets;  // zero-baseline datasets dropped from RG
  UsageCounters usage;
};

// ---------------------------------------------------------------------------
// JSON serialization (ADL hooks for nlohmann::json)

inline void to_json(json& j, const Message& m) {
  j = json{{"role", role_name(m.role)}, {"content", m.content}};
}

inline void from_json(const json& j, Message& m) {
  auto role = role_from_string(j.at("role").get<std::string>());
  if (!role.ok()) throw json::other_error::create(501, role.error().to_string(), &j);
  m.role = role.value();
  m.content = j.at("content").get<std::string>();
}

inline void to_json(json& j, const Conversation& c) { j = c.messages; }

inline void from_json(const json& j, Conversation& c) {
  c.messages = j.get<std::vector<Message>>();
}

inline void to_json(json& j, const RewardSpec& spec) {
  j = json{{"kind", reward_kind_name(spec.kind())}};
  switch (spec.kind()) {
    case RewardKind::exact_match:
      j["gold"] = std::get<ExactMatchSpec>(spec.payload).gold;
      break;
    case RewardKind::multiple_choice: {
      const auto& mc = std::get<MultipleChoiceSpec>(spec.payload);
      j["gold"] = mc.gold;
      if (!mc.choices.empty()) j["choices"] = mc.choices;
      break;
    }
    case RewardKind::rule:
      j["expr"] = std::get<RuleSpec>(spec.payload).expr;
      break;
    case RewardKind::numeric: {
      const auto& n = std::get<NumericSpec>(spec.payload);
      j["gold"] = n.gold;
      j["tolerance"] = n.tolerance;
      break;
    }
    case RewardKind::llm_judge:
      j["gold"] = std::get<LlmJudgeSpec>(spec.payload).gold;
      break;
    case RewardKind::external: {
      const auto& ext = std::get<ExternalSpec>(spec.payload);
      j["verifier_id"] = ext.verifier_id;
      if (!ext.params.is_null()) j["params"] = ext.params;
      break;
    }
  }
}

inline void from_json(const json& j, RewardSpec& spec) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "exact_match") {
    spec.payload = ExactMatchSpec{j.at("gold").get<std::string>()};
  } else if (kind == "multiple_choice") {
    MultipleChoiceSpec mc;
    mc.gold = j.at("gold").get<std::string>();
    if (j.contains("choices")) mc.choices = j.at("choices").get<std::vector<std::string>>();
    spec.payload = std::move(mc);
  } else if (kind == "rule") {
    spec.payload = RuleSpec{j.at("expr")};
  } else if (kind == "numeric") {
    NumericSpec n;
    n.gold = j.at("gold").get<double>();
    n.tolerance = j.value("tolerance", 0.0);
    spec.payload = n;
  } else if (kind == "llm_judge") {
    spec.payload = LlmJudgeSpec{j.at("gold").get<std::string>()};
  } else if (kind == "external") {
    ExternalSpec ext;
    ext.verifier_id = j.at("verifier_id").get<std::string>();
    if (j.contains("params")) ext.params = j.at("params");
    spec.payload = std::move(ext);
  } else {
    throw json::other_error::create(501, "unknown reward kind: " + kind, &j);
  }
}

inline void to_json(json& j, const Example& e) {
  j = json{{"task_id", e.task_id},
           {"dataset_id", e.dataset_id},
           {"source_conversation", e.source_conversation},
           {"target_query", e.target_query},
           {"reward_spec", e.reward_spec}};
  if (e.category) j["category"] = category_name(*e.category);
}

inline void from_json(const json& j, Example& e) {
  e.task_id = j.at("task_id").get<std::string>();
  e.dataset_id = j.at("dataset_id").get<std::string>();
  if (j.contains("category")) {
    auto cat = category_from_string(j.at("category").get<std::string>());
    if (!cat.ok()) throw json::other_error::create(501, cat.error().to_string(), &j);
    e.category = cat.value();
  } else {
    e.category.reset();
  }
  e.source_conversation = j.at("source_conversation").get<Conversation>();
  e.target_query = j.at("target_query").get<std::string>();
  e.reward_spec = j.at("reward_spec").get<RewardSpec>();
}

inline void to_json(json& j, const MemorySet& m) {
  j = json{{"items", m.items}, {"raw_text", m.raw_text}};
}

inline void from_json(const json& j, MemorySet& m) {
  m.items = j.at("items").get<std::vector<std::string>>();
  m.raw_text = j.at("raw_text").get<std::string>();
}

inline void to_json(json& j, const PromptCandidate& p) {
  j = json{{"prompt_id", p.prompt_id},
           {"text", p.text},
           {"provenance", p.provenance == Provenance::proposed ? "proposed" : "seed_asset"},
           {"round", p.round}};
  if (p.parent_id) j["parent_id"] = *p.parent_id;
  if (p.rationale) j["rationale"] = *p.rationale;
}

inline void from_json(const json& j, PromptCandidate& p) {
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.provenance = j.at("provenance").get<std::string>() == "proposed" ? Provenance::proposed
                                                                     : Provenance::seed_asset;
  p.round = j.at("round").get<int>();
  p.parent_id.reset();
  if (j.contains("parent_id")) p.parent_id = j.at("parent_id").get<std::string>();
  p.rationale.reset();
  if (j.contains("rationale")) p.rationale = j.at("rationale").get<std::string>();
}

inline void to_json(json& j, const PairLog& log) {
  j = json{{"task_id", log.task_id},
           {"dataset_id", log.dataset_id},
           {"prompt_id", log.prompt_id},
           {"round", log.round},
           {"source_conversation", log.source_conversation},
           {"extracted_memory", log.extracted_memory},
           {"target_conversation", log.target_conversation},
           {"target_reward", log.target_reward}};
  if (log.summary) j["summary"] = *log.summary;
  if (log.diagnostic) j["diagnostic"] = *log.diagnostic;
}

inline void from_json(const json& j, PairLog& log) {
  log.task_id = j.at("task_id").get<std::string>();
  log.dataset_id = j.at("dataset_id").get<std::string>();
  log.prompt_id = j.at("prompt_id").get<std::string>();
  log.round = j.at("round").get<int>();
  log.source_conversation = j.at("source_conversation").get<Conversation>();
  log.extracted_memory = j.at("extracted_memory").get<MemorySet>();
  log.target_conversation = j.at("target_conversation").get<Conversation>();
  log.target_reward = j.at("target_reward").get<double>();
  log.summary.reset();
  if (j.contains("summary")) log.summary = j.at("summary").get<std::string>();
  log.diagnostic.reset();
  if (j.contains("diagnostic")) log.diagnostic = j.at("diagnostic").get<std::string>();
}

inline void to_json(json& j, const Cluster& c) {
  j = json{{"cluster_id", c.cluster_id},
           {"label", c.label},
           {"description", c.description},
           {"example_task_ids", c.task_ids}};
}

inline void from_json(const json& j, Cluster& c) {
  c.cluster_id = j.at("cluster_id").get<std::string>();
  c.label = j.at("label").get<std::string>();
  c.description = j.at("description").get<std::string>();
  c.task_ids = j.at("example_task_ids").get<std::set<std::string>>();
}

inline void to_json(json& j, const ClusterPool& pool) {
  j = json{{"clusters", pool.clusters}, {"round_updated", pool.round_updated}};
}

inline void from_json(const json& j, ClusterPool& pool) {
  pool.clusters = j.at("clusters").get<std::vector<Cluster>>();
  pool.round_updated = j.at("round_updated").get<int>();
}

inline void to_json(json& j, const DatasetStats& s) {
  j = json{{"mean_reward", s.mean_reward},
           {"n_examples", s.n_examples},
           {"n_repetitions", s.n_repetitions},
           {"rep_std", s.rep_std}};
  if (s.category) j["category"] = category_name(*s.category);
}

inline void from_json(const json& j, DatasetStats& s) {
  s.mean_reward = j.at("mean_reward").get<double>();
  s.n_examples = j.at("n_examples").get<int>();
  s.n_repetitions = j.at("n_repetitions").get<int>();
  s.rep_std = j.value("rep_std", 0.0);
  if (j.contains("category")) {
    auto cat = category_from_string(j.at("category").get<std::string>());
    if (cat.ok()) s.category = cat.value();
  }
}

inline void to_json(json& j, const UsageCounters& u) {
  j = json{{"optimization_llm_calls", u.optimization_llm_calls},
           {"evaluation_calls", u.evaluation_calls},
           {"extraction_llm_calls", u.extraction_llm_calls},
           {"judge_llm_calls", u.judge_llm_calls},
           {"wall_time_ms", u.wall_time.count()}};
}

inline void from_json(const json& j, UsageCounters& u) {
  u.optimization_llm_calls = j.at("optimization_llm_calls").get<long>();
  u.evaluation_calls = j.at("evaluation_calls").get<long>();
  u.extraction_llm_calls = j.value("extraction_llm_calls", 0L);
  u.judge_llm_calls = j.value("judge_llm_calls", 0L);
  u.wall_time = std::chrono::milliseconds(j.value("wall_time_ms", 0L));
}

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"prompt_id", r.prompt_id},
           {"per_dataset", r.per_dataset},
           {"macro_accuracy", r.macro_accuracy},
           {"excluded_datasets", r.excluded_datasets},
           {"usage", r.usage}};
  if (r.relative_gain) j["relative_gain"] = *r.relative_gain;
  if (r.base_prompt_id) j["base_prompt_id"] = *r.base_prompt_id;
}

inline void from_json(const json& j, EvalReport& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.per_dataset = j.at("per_dataset").get<std::map<std::string, DatasetStats>>();
  r.macro_accuracy = j.at("macro_accuracy").get<double>();
  r.excluded_datasets = j.value("excluded_datasets", std::vector<std::string>{});
  if (j.contains("usage")) r.usage = j.at("usage").get<UsageCounters>();
  r.relative_gain.reset();
  if (j.contains("relative_gain")) r.relative_gain = j.at("relative_gain").get<double>();
  r.base_prompt_id.reset();
  if (j.contains("base_prompt_id")) r.base_prompt_id = j.at("base_prompt_id").get<std::string>();
}

}  // namespace clue
