// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clue/concurrency.hpp"
#include "clue/domain.hpp"
#include "clue/gateway.hpp"
#include "clue/logstore.hpp"
#include "clue/metrics.hpp"
#include "clue/result.hpp"
#include "clue/reward.hpp"
#include "clue/text.hpp"

namespace clue {

/// Placeholder injected wherever a memory block is expected but none exists.
inline constexpr std::string_view kNoMemorySentinel = "(no memory)";

inline constexpr std::string_view kGeneratorSystemText = "You are a helpful assistant.";

/// Renders a conversation as <role>content</role> lines inside a
/// <conversation> wrapper, preserving message order. This exact byte shape is
/// what extraction prompts see, so it is fixed and covered by golden tests.
inline std::string render_extraction_input(const Conversation& conversation) {
  std::string out = "<conversation>";
  for (const Message& m : conversation.messages) {
    out += "\n<";
    out += role_name(m.role);
    out += ">";
    out += m.content;
    out += "</";
    out += role_name(m.role);
    out += ">";
  }
  out += "\n</conversation>";
  return out;
}

inline std::string render_extraction_input(const Example& example) {
  return render_extraction_input(example.source_conversation);
}

/// Splits a model reply shaped like "1. first\n2. second" into items. Lines
/// that continue an item are joined with a space; prose before the first
/// numbered line is dropped. A reply with no numbered lines at all becomes a
/// single item so content is never lost.
inline std::vector<std::string> parse_numbered_list(std::string_view text) {
  static const std::regex item_start(R"(^\s*\d+[.)]\s+(.*)$)");
  std::vector<std::string> items;
  for (const std::string& line : split_lines(text)) {
    std::smatch match;
    if (std::regex_match(line, match, item_start)) {
      items.push_back(trim(match[1].str()));
    } else if (!items.empty()) {
      std::string continuation = trim(line);
      if (!continuation.empty()) items.back() += " " + continuation;
    }
  }
  if (items.empty()) {
    std::string whole = trim(text);
    if (!whole.empty()) items.push_back(std::move(whole));
  }
  return items;
}

/// Numbered rendering used when injecting memories into the generator.
inline std::string render_memory_block(const MemorySet& memory) {
  if (memory.items.empty()) return std::string(kNoMemorySentinel);
  std::string out;
  for (std::size_t i = 0; i < memory.items.size(); ++i) {
    if (i > 0) out += "\n";
    out += std::to_string(i + 1) + ". " + memory.items[i];
  }
  return out;
}

/// Whether the generator sees extracted memories or answers bare; the bare
/// mode is the no-memory baseline.
enum class PairMode { with_memory, no_memory };

struct GenerationOutcome {
  std::string response_text;
  Conversation target_conversation;  // what actually reached the generator, plus its reply
};

struct RunnerOptions {
  int repetitions = 3;
  std::size_t max_in_flight = 8;
};

/// Runs the single-step protocol — extract a memory from the source
/// conversation, answer the target query conditioned on it, score the answer
/// — over single pairs or whole example sets, persisting one pair log per
/// attempt.
class Runner {
 public:
  Runner(std::shared_ptr<Gateway> gateway, std::shared_ptr<RewardEngine> rewards,
         std::shared_ptr<LogStore> logs, std::string generation_template,
         RunnerOptions options = {})
      : gateway_(std::move(gateway)),
        rewards_(std::move(rewards)),
        logs_(std::move(logs)),
        generation_template_(std::move(generation_template)),
        options_(options) {}

  const RunnerOptions& options() const { return options_; }
  const std::shared_ptr<LogStore>& logs() const { return logs_; }
  const std::shared_ptr<Gateway>& gateway() const { return gateway_; }

  Result<Scored> score(const Example& example, const std::string& response_text) const {
    return rewards_->score(example.reward_spec, response_text, example);
  }

  /// Extraction prompt text goes in as the system message, the rendered
  /// source conversation as the user message.
  Result<MemorySet> extract_memory(const PromptCandidate& prompt, const Example& example) const {
    ChatRequest request;
    request.role_tag = RoleTag::extractor;
    request.system_text = prompt.text;
    request.user_text = render_extraction_input(example);
    auto response = gateway_->complete(request);
    if (!response.ok()) return response.error();
    MemorySet memory;
    memory.raw_text = trim(response.value().text);
    memory.items = parse_numbered_list(memory.raw_text);
    return memory;
  }

  Result<GenerationOutcome> answer_with_memory(const Example& example, const MemorySet& memory,
                                               PairMode mode = PairMode::with_memory) const {
    ChatRequest request;
    request.role_tag = RoleTag::generator;
    request.system_text = std::string(kGeneratorSystemText);
    request.user_text =
        mode == PairMode::no_memory
            ? example.target_query
            : render_template(generation_template_, {{"memory_block", render_memory_block(memory)},
                                                     {"query", example.target_query}});
    auto response = gateway_->complete(request);
    if (!response.ok()) return response.error();
    GenerationOutcome outcome;
    outcome.response_text = response.value().text;
    outcome.target_conversation.messages = {Message{Role::user, request.user_text},
                                            Message{Role::assistant, outcome.response_text}};
    return outcome;
  }

  /// Total over any input: stage failures score 0 with a diagnostic and the
  /// log is persisted regardless, so batch evaluation always completes.
  PairLog run_pair(const PromptCandidate& prompt, const Example& example, int round,
                   int attempt = 0, PairMode mode = PairMode::with_memory) const {
    PairLog log;
    log.task_id = example.task_id;
    log.dataset_id = example.dataset_id;
    log.prompt_id = prompt.prompt_id;
    log.round = round;
    log.source_conversation = example.source_conversation;
    log.target_conversation.messages = {Message{Role::user, example.target_query}};

    const auto fail = [&](const std::string& stage, const Error& error) {
      log.target_reward = 0.0;
      log.diagnostic = stage + " failed: " + error.message;
      persist(log, attempt);
      return log;
    };

    MemorySet memory;
    if (mode == PairMode::with_memory) {
      auto extracted = extract_memory(prompt, example);
      if (!extracted.ok()) return fail("extraction", extracted.error());
      memory = std::move(extracted.value());
      log.extracted_memory = memory;
    }

    auto generated = answer_with_memory(example, memory, mode);
    if (!generated.ok()) return fail("generation", generated.error());
    log.target_conversation = generated.value().target_conversation;

    auto scored = rewards_->score(example.reward_spec, generated.value().response_text, example);
    if (!scored.ok()) return fail("scoring", scored.error());
    log.target_reward = scored.value().reward;
    log.diagnostic = scored.value().diagnostic;
    persist(log, attempt);
    return log;
  }

  /// Scores every example `repetitions` times with bounded parallelism.
  /// Per-dataset means pool all example×repetition rewards; rep_std is the
  /// standard deviation of the per-repetition dataset means.
  EvalReport evaluate_prompt(const PromptCandidate& prompt, const std::vector<Example>& examples,
                             int repetitions, int round = 0,
                             PairMode mode = PairMode::with_memory) const {
    const auto started = std::chrono::steady_clock::now();
    const UsageCounters before = gateway_->usage();
    repetitions = std::max(1, repetitions);

    const std::size_t n = examples.size();
    std::vector<double> rewards(n * static_cast<std::size_t>(repetitions), 0.0);
    parallel_for(rewards.size(), options_.max_in_flight, [&](std::size_t flat) {
      const int rep = static_cast<int>(flat / n);
      const Example& example = examples[flat % n];
      rewards[flat] = run_pair(prompt, example, round, rep, mode).target_reward;
    });

    // rewards grouped per dataset, overall and per repetition
    std::map<std::string, std::vector<double>> pooled;
    std::map<std::string, std::vector<std::vector<double>>> by_rep;
    for (std::size_t flat = 0; flat < rewards.size(); ++flat) {
      const Example& example = examples[flat % n];
      const int rep = static_cast<int>(flat / n);
      pooled[example.dataset_id].push_back(rewards[flat]);
      auto& reps = by_rep[example.dataset_id];
      reps.resize(repetitions);
      reps[rep].push_back(rewards[flat]);
    }

    std::map<std::string, std::optional<Category>> categories;
    for (const Example& example : examples)
      if (!categories.count(example.dataset_id)) categories[example.dataset_id] = example.category;

    EvalReport report;
    report.prompt_id = prompt.prompt_id;
    std::map<std::string, double> means;
    for (const auto& [dataset_id, values] : pooled) {
      DatasetStats stats;
      stats.mean_reward = dataset_mean(values).value();
      stats.n_examples = static_cast<int>(values.size()) / repetitions;
      stats.n_repetitions = repetitions;
      stats.rep_std = repetition_std(by_rep.at(dataset_id));
      stats.category = categories[dataset_id];
      report.per_dataset[dataset_id] = stats;
      means[dataset_id] = stats.mean_reward;
    }
    if (auto ma = macro_accuracy(means); ma.ok()) report.macro_accuracy = ma.value();

    report.usage = usage_delta(before, gateway_->usage());
    report.usage.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    return report;
  }

  static UsageCounters usage_delta(const UsageCounters& before, const UsageCounters& after) {
    UsageCounters delta;
    delta.optimization_llm_calls = after.optimization_llm_calls - before.optimization_llm_calls;
    delta.evaluation_calls = after.evaluation_calls - before.evaluation_calls;
    delta.extraction_llm_calls = after.extraction_llm_calls - before.extraction_llm_calls;
    delta.judge_llm_calls = after.judge_llm_calls - before.judge_llm_calls;
    delta.wall_time = after.wall_time - before.wall_time;
    return delta;
  }

 private:
  static double repetition_std(const std::vector<std::vector<double>>& per_rep_rewards) {
    std::vector<double> rep_means;
    for (const auto& rep : per_rep_rewards)
      if (!rep.empty()) rep_means.push_back(dataset_mean(rep).value());
    if (rep_means.size() < 2) return 0.0;
    const double mean = dataset_mean(rep_means).value();
    double var = 0.0;
    for (double m : rep_means) var += (m - mean) * (m - mean);
    return std::sqrt(var / static_cast<double>(rep_means.size()));
  }

  void persist(PairLog& log, int attempt) const {
    if (!logs_) return;
    if (auto written = logs_->write(log, attempt); !written.ok()) {
      log.diagnostic = (log.diagnostic ? *log.diagnostic + "; " : std::string()) +
                       "log persist failed: " + written.error().message;
    }
  }

  std::shared_ptr<Gateway> gateway_;
  std::shared_ptr<RewardEngine> rewards_;
  std::shared_ptr<LogStore> logs_;
  std::string generation_template_;
  RunnerOptions options_;
};

}  // namespace clue
