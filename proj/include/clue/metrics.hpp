// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "clue/result.hpp"

namespace clue {

/// Arithmetic mean of per-example rewards for one dataset.
inline Result<double> dataset_mean(const std::vector<double>& rewards) {
  if (rewards.empty()) return make_error(Errc::empty_dataset, "dataset has no rewards");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / static_cast<double>(rewards.size());
}

/// Unweighted mean of the per-dataset means: every dataset counts equally
/// regardless of how many examples it holds.
inline Result<double> macro_accuracy(const std::map<std::string, double>& per_dataset) {
  if (per_dataset.empty()) return make_error(Errc::empty_report, "no per-dataset means");
  double sum = 0.0;
  for (const auto& [_, mean] : per_dataset) sum += mean;
  return sum / static_cast<double>(per_dataset.size());
}

struct RelativeGain {
  double gain = 0.0;
  /// Datasets whose baseline mean is 0; they cannot contribute a ratio and
  /// are dropped from the geometric mean (reported, never silently floored).
  std::vector<std::string> excluded_datasets;
};

/// Geometric mean of per-dataset improvement ratios minus one, computed in
/// log-space so a few extreme ratios cannot dominate. A candidate mean of 0
/// on any included dataset makes the whole product 0, i.e. gain = -1 exactly.
inline Result<RelativeGain> relative_gain(const std::map<std::string, double>& per_dataset,
                                          const std::map<std::string, double>& base) {
  if (per_dataset.size() != base.size())
    return make_error(Errc::key_mismatch, "candidate and baseline report different datasets");
  for (const auto& [dataset_id, _] : per_dataset)
    if (base.find(dataset_id) == base.end())
      return make_error(Errc::key_mismatch, "baseline is missing dataset " + dataset_id);

  RelativeGain out;
  double log_sum = 0.0;
  std::size_t n = 0;
  bool zero_ratio = false;
  for (const auto& [dataset_id, mean] : per_dataset) {
    const double base_mean = base.at(dataset_id);
    if (base_mean <= 0.0) {
      out.excluded_datasets.push_back(dataset_id);
      continue;
    }
    if (mean <= 0.0) {
      zero_ratio = true;
      ++n;
      continue;
    }
    log_sum += std::log(mean / base_mean);
    ++n;
  }
  if (n == 0) return make_error(Errc::all_excluded, "every dataset had a zero baseline");
  out.gain = zero_ratio ? -1.0 : std::exp(log_sum / static_cast<double>(n)) - 1.0;
  return out;
}

}  // namespace clue
