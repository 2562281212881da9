// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness: evaluate prompts, evolve them, run the continual
// stream, and render stored reports. All model traffic goes through the
// gateway; --mock swaps the live endpoints for a scripted backend so every
// command can run deterministically offline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clue/assets.hpp"
#include "clue/config.hpp"
#include "clue/continual.hpp"
#include "clue/corpus.hpp"
#include "clue/evolver.hpp"
#include "clue/gateway.hpp"
#include "clue/http_backend.hpp"
#include "clue/logstore.hpp"
#include "clue/reporting.hpp"
#include "clue/result.hpp"
#include "clue/reward.hpp"
#include "clue/runner.hpp"
#include "clue/scripted.hpp"

namespace {

using clue::Errc;
using clue::Error;
using clue::Result;

struct Services {
  clue::HarnessConfig config;
  std::shared_ptr<clue::Gateway> gateway;
  std::shared_ptr<clue::Runner> runner;
};

Result<std::shared_ptr<clue::Backend>> make_backend(const clue::HarnessConfig& config,
                                                    const std::string& mock_path) {
  if (!mock_path.empty()) {
    std::ifstream in(mock_path);
    if (!in) return clue::make_error(Errc::config_error, "cannot read mock script " + mock_path);
    try {
      auto scripted = clue::ScriptedBackend::from_json(clue::json::parse(in));
      if (!scripted.ok()) return scripted.error();
      return std::static_pointer_cast<clue::Backend>(scripted.value());
    } catch (const clue::json::exception& e) {
      return clue::make_error(Errc::config_error,
                              std::string("bad mock script ") + mock_path + ": " + e.what());
    }
  }
  auto backend = std::make_shared<clue::HttpBackend>(config.default_endpoint);
  for (const auto& [role_name, endpoint] : config.role_endpoints) {
    auto role = clue::role_tag_from_string(role_name);
    if (!role.ok()) return role.error();
    backend->set_role_endpoint(role.value(), endpoint);
  }
  return std::static_pointer_cast<clue::Backend>(backend);
}

Result<Services> make_services(const std::string& config_path, const std::string& mock_path) {
  Services services;
  if (!config_path.empty()) {
    auto loaded = clue::load_config(config_path);
    if (!loaded.ok()) return loaded.error();
    services.config = loaded.value();
  }
  auto backend = make_backend(services.config, mock_path);
  if (!backend.ok()) return backend.error();

  // Mock runs never sleep between retries; live runs back off for real.
  clue::Gateway::SleepFn sleep = mock_path.empty()
                                     ? clue::Gateway::default_sleep()
                                     : [](std::chrono::milliseconds) {};
  services.gateway =
      std::make_shared<clue::Gateway>(backend.value(), clue::RetryPolicy{}, std::move(sleep));
  services.gateway->set_default_decode(services.config.decode);

  auto judge_template = clue::load_template_asset("judge");
  if (!judge_template.ok()) return judge_template.error();
  auto generation_template = clue::load_template_asset("generation");
  if (!generation_template.ok()) return generation_template.error();

  auto rewards = std::make_shared<clue::RewardEngine>(services.gateway, judge_template.value());
  auto logs = std::make_shared<clue::LogStore>(services.config.logs_dir);
  clue::RunnerOptions options;
  options.repetitions = services.config.evolution.repetitions;
  options.max_in_flight = services.config.max_in_flight;
  services.runner = std::make_shared<clue::Runner>(services.gateway, rewards, logs,
                                                   generation_template.value(), options);
  return services;
}

/// --prompt accepts built-in asset ids, a path to a prompt file, or the
/// no-memory pseudo id selecting the baseline mode.
Result<std::pair<clue::PromptCandidate, clue::PairMode>> resolve_prompt_arg(
    const std::string& arg) {
  if (arg == clue::kNoMemoryPromptId) {
    clue::PromptCandidate prompt;
    prompt.prompt_id = std::string(clue::kNoMemoryPromptId);
    prompt.text = "(baseline: no memory is injected)";
    return std::make_pair(prompt, clue::PairMode::no_memory);
  }
  auto prompt = clue::resolve_prompt(arg);
  if (!prompt.ok()) return prompt.error();
  return std::make_pair(prompt.value(), clue::PairMode::with_memory);
}

std::filesystem::path ensure_output_dir(const clue::HarnessConfig& config) {
  std::filesystem::path dir(config.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  return dir;
}

/// Datasets below the test cap are scored with the configured repetitions;
/// datasets at or above it once. The two partial reports merge into one.
clue::EvalReport evaluate_capped(const Services& services, const clue::PromptCandidate& prompt,
                                 const std::vector<clue::Example>& examples, clue::PairMode mode) {
  std::map<std::string, int> dataset_sizes;
  for (const auto& e : examples) ++dataset_sizes[e.dataset_id];
  std::vector<clue::Example> small, large;
  for (const auto& e : examples)
    (dataset_sizes[e.dataset_id] < services.config.test_cap ? small : large).push_back(e);

  std::vector<clue::EvalReport> parts;
  if (!small.empty())
    parts.push_back(services.runner->evaluate_prompt(prompt, small,
                                                     services.config.evolution.repetitions, 0, mode));
  if (!large.empty()) parts.push_back(services.runner->evaluate_prompt(prompt, large, 1, 0, mode));

  clue::EvalReport merged = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    for (const auto& [dataset_id, stats] : parts[i].per_dataset)
      merged.per_dataset[dataset_id] = stats;
    merged.usage.optimization_llm_calls += parts[i].usage.optimization_llm_calls;
    merged.usage.evaluation_calls += parts[i].usage.evaluation_calls;
    merged.usage.extraction_llm_calls += parts[i].usage.extraction_llm_calls;
    merged.usage.judge_llm_calls += parts[i].usage.judge_llm_calls;
    merged.usage.wall_time += parts[i].usage.wall_time;
  }
  std::map<std::string, double> means;
  for (const auto& [dataset_id, stats] : merged.per_dataset) means[dataset_id] = stats.mean_reward;
  if (auto ma = clue::macro_accuracy(means); ma.ok()) merged.macro_accuracy = ma.value();
  merged.prompt_id = prompt.prompt_id;
  return merged;
}

int fail(const Error& error) {
  std::cerr << "error: " << error.to_string() << "\n";
  return 1;
}

int cmd_evaluate(const std::string& config_path, const std::string& mock_path,
                 const std::string& prompt_arg, const std::string& test_path,
                 const std::string& base_path) {
  auto services = make_services(config_path, mock_path);
  if (!services.ok()) return fail(services.error());
  auto prompt = resolve_prompt_arg(prompt_arg);
  if (!prompt.ok()) return fail(prompt.error());
  auto corpus = clue::load_corpus(test_path);
  if (!corpus.ok()) return fail(corpus.error());

  clue::EvalReport report = evaluate_capped(services.value(), prompt.value().first,
                                            corpus.value().examples, prompt.value().second);
  if (!base_path.empty()) {
    auto base = clue::load_report(base_path);
    if (!base.ok())
      return fail(clue::make_error(Errc::missing_base_report,
                                   "base report " + base_path + ": " + base.error().message));
    if (auto rg = clue::apply_relative_gain(report, base.value()); !rg.ok())
      return fail(rg.error());
  }

  const auto out_dir = ensure_output_dir(services.value().config);
  const auto report_path = out_dir / ("report_" + report.prompt_id + ".json");
  if (auto saved = clue::save_report(report, report_path); !saved.ok()) return fail(saved.error());
  std::cout << clue::render_eval_table(report);
  std::cout << "Report written to " << report_path.string() << "\n";
  return 0;
}

int cmd_evolve(const std::string& config_path, const std::string& mock_path,
               const std::string& seed_arg, const std::string& train_path) {
  auto services = make_services(config_path, mock_path);
  if (!services.ok()) return fail(services.error());
  auto seed = resolve_prompt_arg(seed_arg);
  if (!seed.ok()) return fail(seed.error());
  if (seed.value().second == clue::PairMode::no_memory)
    return fail(clue::make_error(Errc::config_error, "cannot evolve the no-memory baseline"));
  auto corpus = clue::load_corpus(train_path);
  if (!corpus.ok()) return fail(corpus.error());
  auto assets = clue::load_evolver_assets();
  if (!assets.ok()) return fail(assets.error());

  clue::ClueEvolver evolver(services.value().runner, assets.value());
  auto outcome = evolver.evolve(services.value().config.evolution, seed.value().first,
                                corpus.value().examples);
  if (!outcome.ok()) return fail(outcome.error());

  const auto out_dir = ensure_output_dir(services.value().config);
  const auto winner_path = out_dir / ("winner_" + outcome.value().best.prompt_id + ".txt");
  {
    std::ofstream out(winner_path, std::ios::trunc);
    out << outcome.value().best.text;
    if (!out.good()) return fail(clue::make_error(Errc::io_error, winner_path.string()));
  }
  // Lineage stays timestamp-free so identical runs produce identical bytes.
  clue::json lineage{{"seed_prompt_id", seed.value().first.prompt_id},
                     {"winner_id", outcome.value().best.prompt_id},
                     {"rounds", outcome.value().lineage},
                     {"winner", outcome.value().best},
                     {"cluster_pool", outcome.value().pool}};
  const auto lineage_path = out_dir / "lineage.json";
  {
    std::ofstream out(lineage_path, std::ios::trunc);
    out << lineage.dump(2) << "\n";
    if (!out.good()) return fail(clue::make_error(Errc::io_error, lineage_path.string()));
  }
  const auto usage_path = out_dir / "usage.json";
  {
    std::ofstream out(usage_path, std::ios::trunc);
    out << clue::json(outcome.value().usage).dump(2) << "\n";
    if (!out.good()) return fail(clue::make_error(Errc::io_error, usage_path.string()));
  }

  std::cout << "Winner: " << outcome.value().best.prompt_id << "\n";
  for (const auto& entry : outcome.value().lineage) {
    std::cout << "  round " << entry.round << ": " << entry.winner_id << " (mean "
              << clue::format_percent(entry.eval_means.at(entry.winner_id)) << "%"
              << (entry.degenerate ? ", degenerate" : "") << ")\n";
  }
  const auto& usage = outcome.value().usage;
  std::cout << "Calls: " << usage.optimization_llm_calls << " optimization, "
            << usage.evaluation_calls << " evaluation, " << usage.extraction_llm_calls
            << " extraction, " << usage.judge_llm_calls << " judge; wall "
            << usage.wall_time.count() << " ms\n";
  std::cout << "Wrote " << winner_path.string() << ", " << lineage_path.string() << ", "
            << usage_path.string() << "\n";
  return 0;
}

int cmd_continual(const std::string& config_path, const std::string& mock_path,
                  const std::string& prompt_arg, const std::string& stream_path, int k) {
  auto services = make_services(config_path, mock_path);
  if (!services.ok()) return fail(services.error());
  auto prompt = resolve_prompt_arg(prompt_arg);
  if (!prompt.ok()) return fail(prompt.error());
  if (prompt.value().second == clue::PairMode::no_memory)
    return fail(clue::make_error(Errc::config_error,
                                 "the continual pipeline requires an extraction prompt"));
  auto corpus = clue::load_corpus(stream_path);
  if (!corpus.ok()) return fail(corpus.error());

  const auto out_dir = ensure_output_dir(services.value().config);
  const auto journal_path = out_dir / "memory_journal.jsonl";
  std::filesystem::remove(journal_path);  // each run starts from an empty store
  auto store = clue::MemoryStore::open(journal_path);
  if (!store.ok()) return fail(store.error());

  clue::ContinualPipeline pipeline(services.value().runner);
  auto report = pipeline.run_stream(prompt.value().first, corpus.value().examples,
                                    static_cast<std::size_t>(k), store.value());
  if (!report.ok()) return fail(report.error());

  const auto report_path = out_dir / "continual_report.json";
  {
    std::ofstream out(report_path, std::ios::trunc);
    out << clue::json(report.value()).dump(2) << "\n";
    if (!out.good()) return fail(clue::make_error(Errc::io_error, report_path.string()));
  }
  std::cout << "Stream of " << report.value().trace.size() << " examples, overall mean "
            << clue::format_percent(report.value().overall_mean) << "%, macro "
            << clue::format_percent(report.value().macro_accuracy) << "%\n";
  for (const auto& [dataset_id, mean] : report.value().per_dataset_mean)
    std::cout << "  " << dataset_id << ": " << clue::format_percent(mean) << "%\n";
  std::cout << "Final store size " << report.value().final_store_size << "; report "
            << report_path.string() << "; journal " << journal_path.string() << "\n";
  return 0;
}

int cmd_report(const std::string& in_path) {
  auto report = clue::load_report(in_path);
  if (!report.ok()) return fail(report.error());
  std::cout << clue::render_eval_table(report.value());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-extraction prompt harness: evaluate, evolve, continual, report"};
  app.require_subcommand(1);

  std::string config_path, mock_path;
  app.add_option("--config", config_path, "Path to the harness config JSON");
  app.add_option("--mock", mock_path, "Scripted-backend script file (offline deterministic runs)");

  std::string prompt_arg, test_path, base_path;
  auto* evaluate = app.add_subcommand("evaluate", "Score a prompt on a test corpus");
  evaluate->add_option("--prompt", prompt_arg, "Built-in prompt id, prompt file, or no_memory")
      ->required();
  evaluate->add_option("--test", test_path, "Test corpus JSONL")->required();
  evaluate->add_option("--base", base_path, "Base report JSON for relative gain");

  std::string seed_arg, train_path;
  auto* evolve = app.add_subcommand("evolve", "Evolve a seed prompt on a training corpus");
  evolve->add_option("--seed-prompt", seed_arg, "Built-in prompt id or prompt file")->required();
  evolve->add_option("--train", train_path, "Training corpus JSONL")->required();

  std::string cont_prompt, stream_path;
  int k = 1;
  auto* continual = app.add_subcommand("continual", "Run the sequential memory stream");
  continual->add_option("--prompt", cont_prompt, "Built-in prompt id or prompt file")->required();
  continual->add_option("--stream", stream_path, "Stream corpus JSONL (arrival order = line order)")
      ->required();
  continual->add_option("--k", k, "Memories retrieved per query")->default_val(1);

  std::string report_in;
  auto* report = app.add_subcommand("report", "Render a stored report as a table");
  report->add_option("--in", report_in, "Report JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  if (evaluate->parsed())
    return cmd_evaluate(config_path, mock_path, prompt_arg, test_path, base_path);
  if (evolve->parsed()) return cmd_evolve(config_path, mock_path, seed_arg, train_path);
  if (continual->parsed())
    return cmd_continual(config_path, mock_path, cont_prompt, stream_path, k);
  if (report->parsed()) return cmd_report(report_in);
  return 1;
}
