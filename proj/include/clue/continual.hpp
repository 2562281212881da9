// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/domain.hpp"
#include "clue/gateway.hpp"
#include "clue/metrics.hpp"
#include "clue/result.hpp"
#include "clue/runner.hpp"
#include "clue/text.hpp"

namespace clue {

struct MemoryEntry {
  std::string memory_text;
  std::vector<double> embedding;
  std::string origin_task_id;
  long sequence_index = 0;
};

inline void to_json(json& j, const MemoryEntry& e) {
  j = json{{"memory_text", e.memory_text},
           {"embedding", e.embedding},
           {"origin_task_id", e.origin_task_id},
           {"sequence_index", e.sequence_index}};
}

inline void from_json(const json& j, MemoryEntry& e) {
  j.at("memory_text").get_to(e.memory_text);
  j.at("embedding").get_to(e.embedding);
  j.at("origin_task_id").get_to(e.origin_task_id);
  j.at("sequence_index").get_to(e.sequence_index);
}

/// Append-only memory store with an optional JSONL journal (one entry per
/// line). Sequence indices are strictly increasing and double as causality
/// witnesses: an entry can only influence answers produced after it existed.
class MemoryStore {
 public:
  MemoryStore() = default;

  /// Opens (or starts) a journal-backed store; existing entries are loaded.
  static Result<MemoryStore> open(const std::filesystem::path& journal_path) {
    MemoryStore store;
    store.journal_path_ = journal_path;
    std::ifstream in(journal_path);
    if (!in) return store;  // nothing journaled yet
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        MemoryEntry entry = json::parse(line).get<MemoryEntry>();
        if (!store.entries_.empty()) {
          if (entry.sequence_index <= store.entries_.back().sequence_index)
            return make_error(Errc::parse_error, journal_path.string() + ":" +
                                                     std::to_string(line_no) +
                                                     ": sequence indices must increase");
          if (entry.embedding.size() != store.entries_.front().embedding.size())
            return make_error(Errc::parse_error, journal_path.string() + ":" +
                                                     std::to_string(line_no) +
                                                     ": embedding dimension mismatch");
        }
        store.entries_.push_back(std::move(entry));
      } catch (const json::exception& e) {
        return make_error(Errc::parse_error, journal_path.string() + ":" +
                                                 std::to_string(line_no) + ": " + e.what());
      }
    }
    if (!store.entries_.empty())
      store.next_sequence_ = store.entries_.back().sequence_index + 1;
    return store;
  }

  Result<long> append(std::string memory_text, std::vector<double> embedding,
                      std::string origin_task_id) {
    if (!entries_.empty() && embedding.size() != entries_.front().embedding.size())
      return make_error(Errc::invalid_example, "embedding dimension mismatch on append");
    MemoryEntry entry{std::move(memory_text), std::move(embedding), std::move(origin_task_id),
                      next_sequence_++};
    if (journal_path_) {
      std::ofstream out(*journal_path_, std::ios::app);
      if (!out) return make_error(Errc::io_error, "cannot append to " + journal_path_->string());
      out << json(entry).dump() << "\n";
      if (!out.good()) return make_error(Errc::io_error, "short write to " + journal_path_->string());
    }
    entries_.push_back(std::move(entry));
    return entries_.back().sequence_index;
  }

  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<MemoryEntry> entries_;
  std::optional<std::filesystem::path> journal_path_;
  long next_sequence_ = 0;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Top-k entries by cosine similarity to the query embedding; equal
/// similarities rank the earlier (lower sequence index) entry first. Returns
/// fewer than k when the store is smaller.
inline std::vector<MemoryEntry> top_k_by_cosine(const std::vector<MemoryEntry>& entries,
                                                const std::vector<double>& query_embedding,
                                                std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    scored.emplace_back(cosine_similarity(query_embedding, entries[i].embedding), i);
  std::stable_sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return entries[a.second].sequence_index < entries[b.second].sequence_index;
  });
  std::vector<MemoryEntry> out;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i)
    out.push_back(entries[scored[i].second]);
  return out;
}

/// Concatenation-based consolidation: retrieved memories become the same
/// numbered block the runner injects, so the empty case renders the exact
/// baseline sentinel.
inline std::string consolidate(const std::vector<MemoryEntry>& entries) {
  MemorySet memory;
  for (const MemoryEntry& e : entries) memory.items.push_back(e.memory_text);
  return render_memory_block(memory);
}

struct ContinualTraceEntry {
  int position = 0;  // 0-based index in the stream
  std::string task_id;
  std::string dataset_id;
  double reward = 0.0;
  std::vector<long> retrieved_sequences;
  std::vector<std::string> retrieved_origins;
  std::vector<long> appended_sequences;
  long store_size_after = 0;
  std::optional<std::string> diagnostic;
};

inline void to_json(json& j, const ContinualTraceEntry& e) {
  j = json{{"position", e.position},
           {"task_id", e.task_id},
           {"dataset_id", e.dataset_id},
           {"reward", e.reward},
           {"retrieved_sequences", e.retrieved_sequences},
           {"retrieved_origins", e.retrieved_origins},
           {"appended_sequences", e.appended_sequences},
           {"store_size_after", e.store_size_after}};
  if (e.diagnostic) j["diagnostic"] = *e.diagnostic;
}

inline void from_json(const json& j, ContinualTraceEntry& e) {
  j.at("position").get_to(e.position);
  j.at("task_id").get_to(e.task_id);
  j.at("dataset_id").get_to(e.dataset_id);
  j.at("reward").get_to(e.reward);
  e.retrieved_sequences = j.value("retrieved_sequences", std::vector<long>{});
  e.retrieved_origins = j.value("retrieved_origins", std::vector<std::string>{});
  e.appended_sequences = j.value("appended_sequences", std::vector<long>{});
  e.store_size_after = j.value("store_size_after", 0L);
  if (j.contains("diagnostic")) e.diagnostic = j.at("diagnostic").get<std::string>();
}

struct ContinualReport {
  std::string prompt_id;
  int k = 1;
  std::map<std::string, double> per_dataset_mean;
  double overall_mean = 0.0;    // mean over the whole stream, example-weighted
  double macro_accuracy = 0.0;  // dataset-weighted
  std::vector<ContinualTraceEntry> trace;
  std::string stream_order_hash;  // results are order-sensitive; the hash pins the order
  long final_store_size = 0;
  UsageCounters usage;
};

inline void to_json(json& j, const ContinualReport& r);
inline void from_json(const json& j, ContinualReport& r);

/// Streaming pipeline: for each arriving example, retrieve prior memories,
/// answer the query with them injected, score, then extract new memories from
/// the completed exchange and append them for later examples. Strictly
/// sequential, so nothing can condition on a memory that does not exist yet.
class ContinualPipeline {
 public:
  explicit ContinualPipeline(std::shared_ptr<Runner> runner) : runner_(std::move(runner)) {}

  Result<std::vector<MemoryEntry>> retrieve_top_k(const MemoryStore& store,
                                                  const std::string& query_text,
                                                  std::size_t k) const {
    if (store.size() == 0) return std::vector<MemoryEntry>{};
    auto embedding = runner_->gateway()->embed(query_text);
    if (!embedding.ok()) return embedding.error();
    return top_k_by_cosine(store.entries(), embedding.value(), k);
  }

  Result<ContinualReport> run_stream(const PromptCandidate& prompt,
                                     const std::vector<Example>& stream, std::size_t k,
                                     MemoryStore& store) const {
    if (stream.empty()) return make_error(Errc::empty_dataset, "continual stream is empty");
    if (k < 1) return make_error(Errc::config_error, "k must be >= 1");
    const auto started = std::chrono::steady_clock::now();
    const UsageCounters before = runner_->gateway()->usage();

    ContinualReport report;
    report.prompt_id = prompt.prompt_id;
    report.k = static_cast<int>(k);
    std::string order_key;
    std::map<std::string, std::vector<double>> per_dataset;
    double reward_sum = 0.0;

    for (std::size_t position = 0; position < stream.size(); ++position) {
      const Example& example = stream[position];
      if (!order_key.empty()) order_key += "\x1f";
      order_key += example.task_id;

      ContinualTraceEntry entry;
      entry.position = static_cast<int>(position);
      entry.task_id = example.task_id;
      entry.dataset_id = example.dataset_id;
      process_example(prompt, example, k, store, entry);

      entry.store_size_after = static_cast<long>(store.size());
      per_dataset[example.dataset_id].push_back(entry.reward);
      reward_sum += entry.reward;
      report.trace.push_back(std::move(entry));
    }

    for (const auto& [dataset_id, rewards] : per_dataset)
      report.per_dataset_mean[dataset_id] = dataset_mean(rewards).value();
    report.overall_mean = reward_sum / static_cast<double>(stream.size());
    report.macro_accuracy = macro_accuracy(report.per_dataset_mean).value();
    report.stream_order_hash = to_hex(fnv1a64(order_key));
    report.final_store_size = static_cast<long>(store.size());
    report.usage = Runner::usage_delta(before, runner_->gateway()->usage());
    report.usage.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    return report;
  }

 private:
  /// One stream step. Failures before an answer exists score 0; failures
  /// after scoring (extraction/embedding of new memories) keep the reward and
  /// skip the append. Either way the stream continues.
  void process_example(const PromptCandidate& prompt, const Example& example, std::size_t k,
                       MemoryStore& store, ContinualTraceEntry& entry) const {
    auto retrieved = retrieve_top_k(store, example.target_query, k);
    if (!retrieved.ok()) {
      entry.diagnostic = "retrieval failed: " + retrieved.error().message;
      return;
    }
    MemorySet injected;
    for (const MemoryEntry& m : retrieved.value()) {
      injected.items.push_back(m.memory_text);
      entry.retrieved_sequences.push_back(m.sequence_index);
      entry.retrieved_origins.push_back(m.origin_task_id);
    }

    auto generated = runner_->answer_with_memory(example, injected);
    if (!generated.ok()) {
      entry.diagnostic = "generation failed: " + generated.error().message;
      return;
    }
    auto scored = runner_->score(example, generated.value().response_text);
    if (!scored.ok()) {
      entry.diagnostic = "scoring failed: " + scored.error().message;
      return;
    }
    entry.reward = scored.value().reward;
    if (scored.value().diagnostic) entry.diagnostic = scored.value().diagnostic;

    // The completed exchange (injected memories and all) is the extraction
    // source for future memories.
    Example source = example;
    source.source_conversation = generated.value().target_conversation;
    auto extracted = runner_->extract_memory(prompt, source);
    if (!extracted.ok()) {
      entry.diagnostic = append_diag(entry.diagnostic,
                                     "extraction failed: " + extracted.error().message);
      return;
    }
    for (const std::string& item : extracted.value().items) {
      auto embedding = runner_->gateway()->embed(item);
      if (!embedding.ok()) {
        entry.diagnostic =
            append_diag(entry.diagnostic, "embedding failed: " + embedding.error().message);
        return;
      }
      auto sequence = store.append(item, embedding.value(), example.task_id);
      if (!sequence.ok()) {
        entry.diagnostic =
            append_diag(entry.diagnostic, "store append failed: " + sequence.error().message);
        return;
      }
      entry.appended_sequences.push_back(sequence.value());
    }
  }

  static std::optional<std::string> append_diag(const std::optional<std::string>& existing,
                                                const std::string& addition) {
    return existing ? *existing + "; " + addition : addition;
  }

  std::shared_ptr<Runner> runner_;
};

inline void to_json(json& j, const ContinualReport& r) {
  j = json{{"prompt_id", r.prompt_id},
           {"k", r.k},
           {"per_dataset_mean", r.per_dataset_mean},
           {"overall_mean", r.overall_mean},
           {"macro_accuracy", r.macro_accuracy},
           {"trace", r.trace},
           {"stream_order_hash", r.stream_order_hash},
           {"final_store_size", r.final_store_size},
           {"usage",
            json{{"optimization_llm_calls", r.usage.optimization_llm_calls},
                 {"evaluation_calls", r.usage.evaluation_calls},
                 {"extraction_llm_calls", r.usage.extraction_llm_calls},
                 {"judge_llm_calls", r.usage.judge_llm_calls},
                 {"wall_time_ms", r.usage.wall_time.count()}}}};
}

inline void from_json(const json& j, ContinualReport& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  r.k = j.value("k", 1);
  r.per_dataset_mean = j.value("per_dataset_mean", std::map<std::string, double>{});
  r.overall_mean = j.value("overall_mean", 0.0);
  r.macro_accuracy = j.value("macro_accuracy", 0.0);
  r.trace = j.value("trace", std::vector<ContinualTraceEntry>{});
  r.stream_order_hash = j.value("stream_order_hash", "");
  r.final_store_size = j.value("final_store_size", 0L);
  if (j.contains("usage")) {
    const json& u = j.at("usage");
    r.usage.optimization_llm_calls = u.value("optimization_llm_calls", 0L);
    r.usage.evaluation_calls = u.value("evaluation_calls", 0L);
    r.usage.extraction_llm_calls = u.value("extraction_llm_calls", 0L);
    r.usage.judge_llm_calls = u.value("judge_llm_calls", 0L);
    r.usage.wall_time = std::chrono::milliseconds(u.value("wall_time_ms", 0LL));
  }
}

}  // namespace clue
