// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/concurrency.hpp"
#include "clue/domain.hpp"
#include "clue/gateway.hpp"
#include "clue/result.hpp"
#include "clue/runner.hpp"
#include "clue/sampling.hpp"
#include "clue/text.hpp"

namespace clue {

inline constexpr std::string_view kSummaryUnavailable = "(summary unavailable)";

/// Knobs for one evolution run. `repetitions` governs standalone evaluation
/// only; tournament rounds always score each contender in a single pass.
struct EvolutionConfig {
  int num_rounds = 5;
  int batch_x = 35;          // analysis batch size, also the fresh eval batch size
  int extra_sample_y = 10;   // eval-batch extras drawn from the analysis batch
  int num_candidates = 3;    // independent proposer invocations per round
  int preview_chars = 4096;  // conversation preview truncation for summaries
  int max_clusters = 7;
  int min_cluster_size = 2;
  int max_analyzer_steps = 8;
  int repetitions = 3;
  std::uint64_t seed = 17;
};

inline void to_json(json& j, const EvolutionConfig& c) {
  j = json{{"num_rounds", c.num_rounds},
           {"batch_x", c.batch_x},
           {"extra_sample_y", c.extra_sample_y},
           {"num_candidates", c.num_candidates},
           {"preview_chars", c.preview_chars},
           {"max_clusters", c.max_clusters},
           {"min_cluster_size", c.min_cluster_size},
           {"max_analyzer_steps", c.max_analyzer_steps},
           {"repetitions", c.repetitions},
           {"seed", c.seed}};
}

inline void from_json(const json& j, EvolutionConfig& c) {
  EvolutionConfig defaults;
  c.num_rounds = j.value("num_rounds", defaults.num_rounds);
  c.batch_x = j.value("batch_x", defaults.batch_x);
  c.extra_sample_y = j.value("extra_sample_y", defaults.extra_sample_y);
  c.num_candidates = j.value("num_candidates", defaults.num_candidates);
  c.preview_chars = j.value("preview_chars", defaults.preview_chars);
  c.max_clusters = j.value("max_clusters", defaults.max_clusters);
  c.min_cluster_size = j.value("min_cluster_size", defaults.min_cluster_size);
  c.max_analyzer_steps = j.value("max_analyzer_steps", defaults.max_analyzer_steps);
  c.repetitions = j.value("repetitions", defaults.repetitions);
  c.seed = j.value("seed", defaults.seed);
}

inline Result<void> validate(const EvolutionConfig& c) {
  if (c.num_rounds < 1) return make_error(Errc::config_error, "num_rounds must be >= 1");
  if (c.num_candidates < 1) return make_error(Errc::config_error, "num_candidates must be >= 1");
  if (c.min_cluster_size < 1) return make_error(Errc::config_error, "min_cluster_size must be >= 1");
  if (c.batch_x < c.min_cluster_size)
    return make_error(Errc::config_error, "batch_x must be >= min_cluster_size");
  if (c.extra_sample_y < 0) return make_error(Errc::config_error, "extra_sample_y must be >= 0");
  if (c.preview_chars < 1) return make_error(Errc::config_error, "preview_chars must be >= 1");
  if (c.max_clusters < 1) return make_error(Errc::config_error, "max_clusters must be >= 1");
  if (c.max_analyzer_steps < 1)
    return make_error(Errc::config_error, "max_analyzer_steps must be >= 1");
  if (c.repetitions < 1) return make_error(Errc::config_error, "repetitions must be >= 1");
  return ok_result();
}

/// One cluster's analysis report plus the tool transcript that produced it.
struct ClusterAnalysis {
  std::string cluster_id;
  std::string label;
  std::string report_text;
  std::vector<ToolLoopStep> transcript;
  bool forced_final = false;  // the step budget ran out before a free-form reply
};

struct LineageEntry {
  int round = 0;
  std::string winner_id;
  std::map<std::string, double> eval_means;  // contender id -> mean reward on the round's eval set
  std::vector<std::string> candidate_ids;
  bool degenerate = false;  // every proposal failed; incumbent advanced unchanged
};

inline void to_json(json& j, const LineageEntry& e) {
  j = json{{"round", e.round},
           {"winner_id", e.winner_id},
           {"eval_means", e.eval_means},
           {"candidate_ids", e.candidate_ids},
           {"degenerate", e.degenerate}};
}

inline void from_json(const json& j, LineageEntry& e) {
  j.at("round").get_to(e.round);
  j.at("winner_id").get_to(e.winner_id);
  e.eval_means = j.value("eval_means", std::map<std::string, double>{});
  e.candidate_ids = j.value("candidate_ids", std::vector<std::string>{});
  e.degenerate = j.value("degenerate", false);
}

struct EvolutionOutcome {
  PromptCandidate best;
  std::vector<LineageEntry> lineage;
  UsageCounters usage;
  ClusterPool pool;
};

struct EvolutionState {
  int round = 0;  // last completed round; 0 means only the seed exists
  PromptCandidate incumbent;
  ClusterPool pool;
  std::vector<LineageEntry> lineage;
  std::mt19937_64 rng;
};

/// Shuffled view over the training set. Batches walk the permutation; when
/// fewer than a full batch remains, the remainder is discarded and a fresh
/// permutation is drawn, so no batch ever contains the same example twice.
class TrainStream {
 public:
  TrainStream(std::vector<Example> examples, std::mt19937_64& rng)
      : examples_(std::move(examples)) {
    deterministic_shuffle(examples_, rng);
  }

  std::size_t size() const { return examples_.size(); }

  Result<std::vector<Example>> next_batch(std::size_t n, std::mt19937_64& rng) {
    if (n > examples_.size())
      return make_error(Errc::config_error, "batch of " + std::to_string(n) +
                                                " requested from a training set of " +
                                                std::to_string(examples_.size()));
    if (examples_.size() - pos_ < n) {
      deterministic_shuffle(examples_, rng);
      pos_ = 0;
    }
    std::vector<Example> batch(examples_.begin() + pos_, examples_.begin() + pos_ + n);
    pos_ += n;
    return batch;
  }

 private:
  std::vector<Example> examples_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Stage-prompt rendering. These are pure so golden tests can pin the exact
// bytes each model role receives.

inline std::string render_summarizer_prompt(const std::string& tmpl, const PairLog& log,
                                            int preview_chars) {
  const auto chars = static_cast<std::size_t>(preview_chars);
  return render_template(
      tmpl, {{"source_preview", truncate_chars(render_extraction_input(log.source_conversation), chars)},
             {"extracted_memory", render_memory_block(log.extracted_memory)},
             {"target_preview", truncate_chars(render_extraction_input(log.target_conversation), chars)},
             {"target_reward", format_number(log.target_reward)}});
}

inline std::string render_pool_section(const ClusterPool& pool) {
  if (pool.clusters.empty())
    return "There is no existing cluster pool yet -- this is the first clustering round.";
  json existing = json::array();
  for (const Cluster& c : pool.clusters)
    existing.push_back(json{{"cluster_id", c.cluster_id}, {"label", c.label},
                            {"description", c.description}});
  return "Existing cluster pool (you may reuse cluster_ids, update labels/descriptions, merge, "
         "or split):\n<existing_clusters>\n" +
         existing.dump(2) + "\n</existing_clusters>";
}

inline std::string render_batch_summaries(const std::map<std::string, std::string>& summaries) {
  std::string out;
  bool first = true;
  for (const auto& [task_id, summary] : summaries) {
    if (!first) out += "\n";
    first = false;
    out += "<example id=\"" + task_id + "\">\n" + summary + "\n</example>";
  }
  return out;
}

inline std::string render_cluster_manager_prompt(const std::string& tmpl,
                                                 const std::map<std::string, std::string>& summaries,
                                                 const ClusterPool& pool) {
  return render_template(tmpl, {{"existing_pool_section", render_pool_section(pool)},
                                {"batch_summaries", render_batch_summaries(summaries)}});
}

inline std::string render_task_id_list(const Cluster& cluster) {
  std::string out;
  for (const std::string& id : cluster.task_ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

inline std::string render_cluster_analyzer_prompt(const std::string& tmpl, const Cluster& cluster,
                                                  int round, const std::string& logs_dir,
                                                  const std::string& base_prompt) {
  return render_template(tmpl,
                         {{"round_id", std::to_string(round)},
                          {"cluster_label", cluster.label},
                          {"cluster_description", cluster.description},
                          {"task_ids", render_task_id_list(cluster)},
                          {"num_cluster_examples", std::to_string(cluster.task_ids.size())},
                          {"logs_dir", logs_dir},
                          {"base_prompt", base_prompt}});
}

inline std::string render_cluster_analyses(const std::vector<ClusterAnalysis>& analyses) {
  std::string out;
  for (std::size_t i = 0; i < analyses.size(); ++i) {
    if (i > 0) out += "\n";
    out += "<cluster_analysis cluster_id=\"" + analyses[i].cluster_id + "\" label=\"" +
           analyses[i].label + "\">\n" + analyses[i].report_text + "\n</cluster_analysis>";
  }
  return out;
}

inline std::string render_proposer_prompt(const std::string& tmpl,
                                          const std::vector<ClusterAnalysis>& analyses,
                                          const PromptCandidate& parent) {
  return render_template(tmpl, {{"num_clusters", std::to_string(analyses.size())},
                                {"cluster_analyses_text", render_cluster_analyses(analyses)},
                                {"parent_prompt_id", parent.prompt_id},
                                {"base_system_prompt", parent.text}});
}

inline std::string candidate_slot_id(int round, int slot) {
  std::string n = std::to_string(slot);
  if (n.size() < 2) n = "0" + n;
  return "r" + std::to_string(round) + "_cand_" + n;
}

/// Stage-prompt templates plus the tool-calling protocol appendix.
struct EvolverAssets {
  std::string summarizer;
  std::string cluster_manager;
  std::string cluster_analyzer;
  std::string proposer;
  std::string tool_protocol;
};

/// How a batch clustering was obtained, for invariant checks and reporting.
struct ClusterOutcome {
  ClusterPool pool;
  bool repaired = false;       // deterministic repair had to fix the model output
  bool used_fallback = false;  // both parse attempts failed; whole batch in one cluster
  int llm_attempts = 1;
};

/// Extension point: anything that can turn a seed prompt plus training
/// examples into an improved prompt.
class Evolver {
 public:
  virtual ~Evolver() = default;
  virtual Result<EvolutionOutcome> evolve(const EvolutionConfig& config,
                                          const PromptCandidate& seed_prompt,
                                          const std::vector<Example>& train) = 0;
};

/// Cluster-based evolution: each round summarizes the incumbent's extraction
/// logs, clusters them by extraction scenario, analyzes each cluster with a
/// tool-using agent, proposes candidate prompts, and advances the tournament
/// winner.
class ClueEvolver final : public Evolver {
 public:
  ClueEvolver(std::shared_ptr<Runner> runner, EvolverAssets assets)
      : runner_(std::move(runner)), assets_(std::move(assets)) {}

  Result<EvolutionOutcome> evolve(const EvolutionConfig& config, const PromptCandidate& seed_prompt,
                                  const std::vector<Example>& train) override {
    if (auto valid = validate(config); !valid.ok()) return valid.error();
    if (auto valid = validate(seed_prompt); !valid.ok()) return valid.error();
    if (train.size() < static_cast<std::size_t>(config.batch_x))
      return make_error(Errc::config_error,
                        "training set smaller than batch_x (" + std::to_string(train.size()) +
                            " < " + std::to_string(config.batch_x) + ")");

    const auto started = std::chrono::steady_clock::now();
    const UsageCounters before = runner_->gateway()->usage();

    EvolutionState state;
    state.rng.seed(config.seed);
    state.incumbent = seed_prompt;
    TrainStream stream(train, state.rng);

    for (int r = 0; r < config.num_rounds; ++r) {
      if (auto round = run_round(state, stream, config); !round.ok()) return round.error();
    }

    EvolutionOutcome outcome;
    outcome.best = state.incumbent;
    outcome.lineage = std::move(state.lineage);
    outcome.pool = std::move(state.pool);
    outcome.usage = Runner::usage_delta(before, runner_->gateway()->usage());
    outcome.usage.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    return outcome;
  }

  /// One tournament round: evaluate the incumbent on a fresh analysis batch,
  /// summarize + cluster + analyze the logs, propose candidates, then score
  /// incumbent and candidates on a fresh eval batch (plus extras resampled
  /// from the analysis batch) and advance the argmax winner. Ties keep the
  /// incumbent, then prefer the lowest candidate slot.
  Result<void> run_round(EvolutionState& state, TrainStream& stream,
                         const EvolutionConfig& config) {
    const int round = state.round + 1;
    const std::size_t fan_out = runner_->options().max_in_flight;

    auto batch = stream.next_batch(static_cast<std::size_t>(config.batch_x), state.rng);
    if (!batch.ok()) return batch.error();
    const std::vector<Example>& analysis_batch = batch.value();

    std::vector<PairLog> logs(analysis_batch.size());
    parallel_for(logs.size(), fan_out, [&](std::size_t i) {
      logs[i] = runner_->run_pair(state.incumbent, analysis_batch[i], round, 0);
    });

    std::vector<std::string> summary_slots(logs.size());
    parallel_for(logs.size(), fan_out,
                 [&](std::size_t i) { summary_slots[i] = summarize_example(logs[i], config); });
    std::map<std::string, std::string> summaries;
    for (std::size_t i = 0; i < logs.size(); ++i) summaries[logs[i].task_id] = summary_slots[i];

    ClusterOutcome clustered = cluster_batch(summaries, state.pool, config);
    state.pool = std::move(clustered.pool);
    state.pool.round_updated = round;

    std::vector<std::optional<ClusterAnalysis>> analysis_slots(state.pool.clusters.size());
    parallel_for(analysis_slots.size(), fan_out, [&](std::size_t i) {
      auto analysis = analyze_cluster(state.pool.clusters[i], state.incumbent, round, config);
      if (analysis.ok()) analysis_slots[i] = std::move(analysis.value());
    });
    std::vector<ClusterAnalysis> analyses;
    for (auto& slot : analysis_slots)
      if (slot) analyses.push_back(std::move(*slot));

    std::vector<PromptCandidate> candidates;
    for (int slot = 1; slot <= config.num_candidates; ++slot) {
      auto candidate =
          propose_prompt(analyses, state.incumbent, candidate_slot_id(round, slot), round);
      if (candidate.ok()) candidates.push_back(std::move(candidate.value()));
    }

    auto fresh = stream.next_batch(static_cast<std::size_t>(config.batch_x), state.rng);
    if (!fresh.ok()) return fresh.error();
    std::vector<Example> eval_set = std::move(fresh.value());
    const std::vector<Example> extras = sample_without_replacement(
        analysis_batch, static_cast<std::size_t>(config.extra_sample_y), state.rng);
    eval_set.insert(eval_set.end(), extras.begin(), extras.end());

    std::vector<PromptCandidate> contenders;
    contenders.push_back(state.incumbent);
    contenders.insert(contenders.end(), candidates.begin(), candidates.end());

    LineageEntry entry;
    entry.round = round;
    for (const PromptCandidate& c : candidates) entry.candidate_ids.push_back(c.prompt_id);
    entry.degenerate = candidates.empty();

    std::size_t winner_index = 0;
    double best_mean = -1.0;
    for (std::size_t c = 0; c < contenders.size(); ++c) {
      std::vector<double> rewards(eval_set.size(), 0.0);
      parallel_for(eval_set.size(), fan_out, [&](std::size_t i) {
        rewards[i] = runner_->run_pair(contenders[c], eval_set[i], round, 1).target_reward;
      });
      double sum = 0.0;
      for (double r : rewards) sum += r;
      const double mean = eval_set.empty() ? 0.0 : sum / static_cast<double>(eval_set.size());
      entry.eval_means[contenders[c].prompt_id] = mean;
      if (mean > best_mean) {  // strict: equal means keep the earlier contender
        best_mean = mean;
        winner_index = c;
      }
    }

    entry.winner_id = contenders[winner_index].prompt_id;
    state.incumbent = std::move(contenders[winner_index]);
    state.round = round;
    state.lineage.push_back(std::move(entry));
    return ok_result();
  }

  /// Renders the summary request for one extraction log, stores the trimmed
  /// reply on the log (in memory and in the store). Model failure degrades to
  /// a sentinel summary so the example stays clusterable.
  std::string summarize_example(PairLog& log, const EvolutionConfig& config) {
    ChatRequest request;
    request.role_tag = RoleTag::summarizer;
    request.user_text = render_summarizer_prompt(assets_.summarizer, log, config.preview_chars);
    auto response = runner_->gateway()->complete(request);
    std::string summary =
        response.ok() ? trim(response.value().text) : std::string(kSummaryUnavailable);
    if (summary.empty()) summary = kSummaryUnavailable;
    log.summary = summary;
    if (runner_->logs())  // best effort; the in-memory copy is authoritative
      static_cast<void>(
          runner_->logs()->attach_summary(log.task_id, log.round, log.prompt_id, summary));
    return summary;
  }

  /// Asks the cluster-manager role for a partition of the batch. Invalid
  /// output gets one repair retry with the violations spelled out; still
  /// invalid output is repaired deterministically. Only when both replies are
  /// unparsable does the whole batch collapse into a single fallback cluster.
  ClusterOutcome cluster_batch(const std::map<std::string, std::string>& summaries,
                               const ClusterPool& pool, const EvolutionConfig& config) {
    const std::string base_prompt = render_cluster_manager_prompt(assets_.cluster_manager,
                                                                  summaries, pool);
    ClusterOutcome outcome;

    auto first = request_clusters(base_prompt);
    std::vector<std::string> violations;
    if (first.ok()) {
      violations = cluster_violations(first.value(), summaries, config);
      if (violations.empty()) {
        outcome.pool = finalize_pool(first.value(), pool);
        return outcome;
      }
    } else {
      violations = {first.error().message};
    }

    std::string notice = "\n\nYour previous output was invalid:\n";
    for (const std::string& v : violations) notice += "- " + v + "\n";
    notice += "Return ONLY a corrected JSON object in the required schema.";
    auto second = request_clusters(base_prompt + notice);
    outcome.llm_attempts = 2;

    if (second.ok() && cluster_violations(second.value(), summaries, config).empty()) {
      outcome.pool = finalize_pool(second.value(), pool);
      return outcome;
    }
    if (second.ok() || first.ok()) {
      outcome.repaired = true;
      outcome.pool = finalize_pool(
          repair_clusters(second.ok() ? second.value() : first.value(), summaries, config), pool);
      return outcome;
    }

    outcome.used_fallback = true;
    Cluster all;
    all.label = "all batch examples";
    all.description =
        "Fallback cluster covering the whole batch; the clustering model produced no parsable "
        "output.";
    for (const auto& [task_id, _] : summaries) all.task_ids.insert(task_id);
    outcome.pool = finalize_pool({all}, pool);
    return outcome;
  }

  /// Deterministic cleanup of an invalid partition: foreign ids dropped,
  /// duplicates keep their first cluster, unassigned ids join the largest
  /// cluster, undersized clusters merge into the cluster whose label and
  /// description share the most words with their summaries, and the smallest
  /// clusters merge into the largest until the count fits.
  static std::vector<Cluster> repair_clusters(std::vector<Cluster> clusters,
                                              const std::map<std::string, std::string>& summaries,
                                              const EvolutionConfig& config) {
    std::set<std::string> seen;
    for (Cluster& cluster : clusters) {
      std::set<std::string> kept;
      for (const std::string& id : cluster.task_ids) {
        if (summaries.find(id) == summaries.end()) continue;  // not in this batch
        if (seen.insert(id).second) kept.insert(id);
      }
      cluster.task_ids = std::move(kept);
    }
    clusters.erase(std::remove_if(clusters.begin(), clusters.end(),
                                  [](const Cluster& c) { return c.task_ids.empty(); }),
                   clusters.end());

    if (clusters.empty()) {
      Cluster all;
      all.label = "mixed extraction scenarios";
      all.description = "Repair cluster holding every batch example.";
      clusters.push_back(all);
    }
    for (const auto& [task_id, _] : summaries) {
      if (seen.count(task_id)) continue;
      auto largest = std::max_element(clusters.begin(), clusters.end(),
                                      [](const Cluster& a, const Cluster& b) {
                                        return a.task_ids.size() < b.task_ids.size();
                                      });
      largest->task_ids.insert(task_id);
    }

    const auto shared_tokens = [&](const Cluster& undersized, const Cluster& target) {
      std::set<std::string> member_words;
      for (const std::string& id : undersized.task_ids) {
        auto it = summaries.find(id);
        if (it == summaries.end()) continue;
        for (std::string& w : word_tokens(it->second)) member_words.insert(std::move(w));
      }
      std::size_t shared = 0;
      std::set<std::string> counted;
      for (std::string& w : word_tokens(target.label + " " + target.description))
        if (member_words.count(w) && counted.insert(std::move(w)).second) ++shared;
      return shared;
    };

    const auto merge_into = [&](std::size_t from, std::size_t to) {
      clusters[to].task_ids.insert(clusters[from].task_ids.begin(), clusters[from].task_ids.end());
      clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(from));
    };

    for (bool merged = true; merged && clusters.size() > 1;) {
      merged = false;
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (clusters[i].task_ids.size() >= static_cast<std::size_t>(config.min_cluster_size))
          continue;
        std::size_t best = i == 0 ? 1 : 0;
        std::size_t best_shared = 0;
        for (std::size_t j = 0; j < clusters.size(); ++j) {
          if (j == i) continue;
          const std::size_t shared = shared_tokens(clusters[i], clusters[j]);
          if (shared > best_shared) {
            best_shared = shared;
            best = j;
          }
        }
        merge_into(i, best);
        merged = true;
        break;
      }
    }

    while (clusters.size() > static_cast<std::size_t>(config.max_clusters)) {
      std::size_t smallest = 0, largest = 0;
      for (std::size_t i = 1; i < clusters.size(); ++i) {
        if (clusters[i].task_ids.size() < clusters[smallest].task_ids.size()) smallest = i;
        if (clusters[i].task_ids.size() > clusters[largest].task_ids.size()) largest = i;
      }
      if (smallest == largest) largest = smallest == 0 ? 1 : 0;
      merge_into(smallest, largest);
    }
    return clusters;
  }

  /// Violations of the partition contract, in stable order; empty = valid.
  static std::vector<std::string> cluster_violations(
      const std::vector<Cluster>& clusters, const std::map<std::string, std::string>& summaries,
      const EvolutionConfig& config) {
    std::vector<std::string> violations;
    if (clusters.size() > static_cast<std::size_t>(config.max_clusters))
      violations.push_back("more than " + std::to_string(config.max_clusters) + " clusters");
    std::map<std::string, int> counts;
    for (const Cluster& cluster : clusters) {
      if (cluster.task_ids.size() < static_cast<std::size_t>(config.min_cluster_size))
        violations.push_back("cluster \"" + cluster.label + "\" has fewer than " +
                             std::to_string(config.min_cluster_size) + " examples");
      for (const std::string& id : cluster.task_ids) {
        if (summaries.find(id) == summaries.end())
          violations.push_back("task id " + id + " is not in the batch");
        else
          ++counts[id];
      }
    }
    for (const auto& [task_id, _] : summaries)
      if (!counts.count(task_id)) violations.push_back("task id " + task_id + " is unassigned");
    for (const auto& [task_id, n] : counts)
      if (n > 1) violations.push_back("task id " + task_id + " is assigned to multiple clusters");
    return violations;
  }

  /// Tool-using analysis of one cluster. read_pair_log mechanically refuses
  /// task ids outside the cluster, so the model cannot peek even if it tries.
  Result<ClusterAnalysis> analyze_cluster(const Cluster& cluster, const PromptCandidate& incumbent,
                                          int round, const EvolutionConfig& config) {
    const std::string logs_dir = runner_->logs() ? runner_->logs()->root().string() : "(none)";
    ChatRequest request;
    request.role_tag = RoleTag::cluster_analyzer;
    request.user_text = render_cluster_analyzer_prompt(assets_.cluster_analyzer, cluster, round,
                                                       logs_dir, incumbent.text) +
                        "\n\n" + assets_.tool_protocol;

    ToolMap tools;
    tools["list_cluster_tasks"] = [this, &cluster, &incumbent, round](const json&) {
      json listing = json::array();
      for (const std::string& id : cluster.task_ids) {
        json row{{"task_id", id}};
        if (runner_->logs()) {
          auto log = runner_->logs()->read(id, round, incumbent.prompt_id);
          if (log.ok()) row["target_reward"] = log.value().target_reward;
        }
        listing.push_back(std::move(row));
      }
      return listing.dump(2);
    };
    tools["read_pair_log"] = [this, &cluster, &incumbent, round](const json& args) -> std::string {
      const std::string id = args.value("task_id", "");
      if (!cluster.task_ids.count(id))
        return "AccessDenied: task " + id + " is outside this cluster";
      if (!runner_->logs()) return "LogNotFound: no log store configured";
      auto log = runner_->logs()->read(id, round, incumbent.prompt_id);
      if (!log.ok()) return "LogNotFound: " + log.error().message;
      return json(log.value()).dump(2);
    };

    auto loop = runner_->gateway()->run_tool_loop(request, tools, config.max_analyzer_steps);
    if (!loop.ok()) return loop.error();

    ClusterAnalysis analysis;
    analysis.cluster_id = cluster.cluster_id;
    analysis.label = cluster.label;
    analysis.report_text = trim(loop.value().final_text);
    analysis.transcript = std::move(loop.value().transcript);
    analysis.forced_final = loop.value().forced_final;
    return analysis;
  }

  /// One independent proposer invocation. The reply must be a JSON array with
  /// exactly one object carrying a non-empty system_prompt; a second object
  /// is tolerated (first wins), a second failure is not.
  Result<PromptCandidate> propose_prompt(const std::vector<ClusterAnalysis>& analyses,
                                         const PromptCandidate& parent,
                                         const std::string& candidate_id, int round) {
    if (analyses.empty())
      return make_error(Errc::proposal_failed, "no cluster analyses to synthesize from");
    const std::string base_prompt = render_proposer_prompt(assets_.proposer, analyses, parent);

    std::string last_problem = "proposer produced no output";
    for (int attempt = 0; attempt < 2; ++attempt) {
      ChatRequest request;
      request.role_tag = RoleTag::proposer;
      request.user_text = attempt == 0
                              ? base_prompt
                              : base_prompt + "\n\nYour previous output was invalid: " +
                                    last_problem +
                                    "\nReturn ONLY a JSON array with exactly 1 object and a "
                                    "non-empty system_prompt.";
      auto response = runner_->gateway()->complete(request);
      if (!response.ok()) {
        last_problem = response.error().message;
        continue;
      }
      auto block = extract_json_block(response.value().text, '[');
      if (!block) {
        last_problem = "no JSON array found";
        continue;
      }
      try {
        json parsed = json::parse(*block);
        if (!parsed.is_array() || parsed.empty() || !parsed.at(0).is_object()) {
          last_problem = "expected a JSON array with exactly 1 object";
          continue;
        }
        const json& object = parsed.at(0);
        const std::string text = trim(object.value("system_prompt", ""));
        if (text.empty()) {
          last_problem = "system_prompt was empty";
          continue;
        }
        PromptCandidate candidate;
        candidate.prompt_id = candidate_id;
        candidate.parent_id = parent.prompt_id;
        candidate.text = text;
        candidate.provenance = Provenance::proposed;
        candidate.round = round;
        if (object.contains("rationale") && object.at("rationale").is_string())
          candidate.rationale = object.at("rationale").get<std::string>();
        return candidate;
      } catch (const json::exception& e) {
        last_problem = std::string("JSON parse failure: ") + e.what();
      }
    }
    return make_error(Errc::proposal_failed, "proposal rejected twice: " + last_problem);
  }

 private:
  /// One cluster-manager call plus reply parsing (fences and surrounding
  /// prose tolerated; only the first balanced JSON object is considered).
  Result<std::vector<Cluster>> request_clusters(const std::string& user_text) {
    ChatRequest request;
    request.role_tag = RoleTag::cluster_manager;
    request.user_text = user_text;
    auto response = runner_->gateway()->complete(request);
    if (!response.ok()) return response.error();
    auto block = extract_json_block(response.value().text, '{');
    if (!block)
      return make_error(Errc::unparsable_cluster_json, "no JSON object in clustering reply");
    try {
      json parsed = json::parse(*block);
      if (!parsed.contains("clusters") || !parsed.at("clusters").is_array() ||
          parsed.at("clusters").empty())
        return make_error(Errc::unparsable_cluster_json, "reply has no clusters array");
      std::vector<Cluster> clusters;
      for (const json& entry : parsed.at("clusters")) {
        Cluster cluster;
        cluster.cluster_id = entry.value("cluster_id", "");
        cluster.label = entry.value("label", "");
        cluster.description = entry.value("description", "");
        for (const json& id : entry.value("example_task_ids", json::array()))
          if (id.is_string()) cluster.task_ids.insert(id.get<std::string>());
        clusters.push_back(std::move(cluster));
      }
      return clusters;
    } catch (const json::exception& e) {
      return make_error(Errc::unparsable_cluster_json,
                        std::string("clustering reply did not parse: ") + e.what());
    }
  }

  /// Keeps model-chosen ids only when they reference an existing pool
  /// cluster; everything else gets the next fresh id. Ids never repeat
  /// within a run.
  ClusterPool finalize_pool(std::vector<Cluster> clusters, const ClusterPool& previous) {
    ClusterPool pool;
    std::set<std::string> used;
    for (Cluster& cluster : clusters) {
      const bool known = previous.find(cluster.cluster_id) != nullptr;
      if (!known || !used.insert(cluster.cluster_id).second) cluster.cluster_id = fresh_cluster_id();
      used.insert(cluster.cluster_id);
      if (cluster.label.empty()) cluster.label = "unlabeled extraction scenario";
      pool.clusters.push_back(std::move(cluster));
    }
    return pool;
  }

  std::string fresh_cluster_id() {
    const int n = next_cluster_number_++;
    std::string digits = std::to_string(n);
    if (digits.size() < 2) digits = "0" + digits;
    return "cluster_" + digits;
  }

  std::shared_ptr<Runner> runner_;
  EvolverAssets assets_;
  int next_cluster_number_ = 1;
};

}  // namespace clue
