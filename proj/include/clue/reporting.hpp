// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/domain.hpp"
#include "clue/metrics.hpp"
#include "clue/result.hpp"
#include "clue/text.hpp"

namespace clue {

inline Result<void> save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) return make_error(Errc::io_error, "cannot write report " + path.string());
  out << json(report).dump(2) << "\n";
  if (!out.good()) return make_error(Errc::io_error, "short write to " + path.string());
  return ok_result();
}

inline Result<EvalReport> load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::io_error, "cannot read report " + path.string());
  try {
    return json::parse(in).get<EvalReport>();
  } catch (const json::exception& e) {
    return make_error(Errc::parse_error, "bad report " + path.string() + ": " + e.what());
  }
}

/// Computes the relative gain of `report` against `base` and records the
/// base id plus any zero-baseline exclusions on the report.
inline Result<void> apply_relative_gain(EvalReport& report, const EvalReport& base) {
  std::map<std::string, double> ours, theirs;
  for (const auto& [dataset_id, stats] : report.per_dataset) ours[dataset_id] = stats.mean_reward;
  for (const auto& [dataset_id, stats] : base.per_dataset) theirs[dataset_id] = stats.mean_reward;
  auto gain = relative_gain(ours, theirs);
  if (!gain.ok()) return gain.error();
  report.relative_gain = gain.value().gain;
  report.excluded_datasets = gain.value().excluded_datasets;
  report.base_prompt_id = base.prompt_id;
  return ok_result();
}

inline std::string category_label(const std::optional<Category>& category) {
  return category ? category_name(*category) : "uncategorized";
}

/// Signed percentage with two decimals, e.g. 0.10 -> "+10.00".
inline std::string format_signed_percent(double fraction) {
  return (fraction >= 0 ? "+" : "") + format_percent(fraction);
}

/// Human table: datasets grouped by category with per-category and overall
/// macro accuracy, repetition std, and (when a base is recorded) the relative
/// gain plus any datasets excluded from it.
inline std::string render_eval_table(const EvalReport& report) {
  std::ostringstream os;
  const std::string rule(66, '-');
  os << "Prompt: " << report.prompt_id << "\n" << rule << "\n";
  os << std::left << std::setw(34) << "Category / Dataset" << std::right << std::setw(8) << "Mean%"
     << std::setw(8) << "Std%" << std::setw(8) << "N" << std::setw(7) << "Reps" << "\n"
     << rule << "\n";

  std::map<std::string, std::vector<std::pair<std::string, DatasetStats>>> groups;
  std::vector<std::string> group_order;
  for (const std::string& label :
       {std::string("personalization"), std::string("problem_solving"), std::string("agentic"),
        std::string("uncategorized")})
    group_order.push_back(label);
  for (const auto& [dataset_id, stats] : report.per_dataset)
    groups[category_label(stats.category)].emplace_back(dataset_id, stats);

  for (const std::string& label : group_order) {
    auto it = groups.find(label);
    if (it == groups.end()) continue;
    os << label << "\n";
    double sum = 0.0;
    for (const auto& [dataset_id, stats] : it->second) {
      os << std::left << "  " << std::setw(32) << dataset_id << std::right << std::setw(8)
         << format_percent(stats.mean_reward) << std::setw(8) << format_percent(stats.rep_std)
         << std::setw(8) << stats.n_examples << std::setw(7) << stats.n_repetitions << "\n";
      sum += stats.mean_reward;
    }
    os << std::left << "  " << std::setw(32) << "(category mean)" << std::right << std::setw(8)
       << format_percent(sum / static_cast<double>(it->second.size())) << "\n";
  }

  os << rule << "\n";
  os << std::left << std::setw(34) << "Macro accuracy" << std::right << std::setw(8)
     << format_percent(report.macro_accuracy) << "\n";
  if (report.relative_gain) {
    os << std::left << std::setw(34)
       << ("Relative gain vs " + report.base_prompt_id.value_or("(unnamed base)")) << std::right
       << std::setw(8) << format_signed_percent(*report.relative_gain) << "\n";
    os << "Excluded from relative gain (zero baseline): ";
    if (report.excluded_datasets.empty()) {
      os << "none";
    } else {
      for (std::size_t i = 0; i < report.excluded_datasets.size(); ++i)
        os << (i ? ", " : "") << report.excluded_datasets[i];
    }
    os << "\n";
  }
  os << "Model calls: " << report.usage.evaluation_calls << " generation, "
     << report.usage.extraction_llm_calls << " extraction, " << report.usage.judge_llm_calls
     << " judge (" << report.usage.wall_time.count() << " ms)\n";
  return os.str();
}

}  // namespace clue
