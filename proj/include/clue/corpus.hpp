// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/domain.hpp"
#include "clue/result.hpp"
#include "clue/sampling.hpp"
#include "clue/text.hpp"

namespace clue {

/// Loads a JSONL corpus, one example per line. Malformed lines fail with the
/// path and line number; domain validation (unique task ids, per-example
/// invariants) runs on the assembled set.
inline Result<Corpus> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::io_error, "cannot read corpus " + path.string());
  std::vector<Example> examples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      examples.push_back(json::parse(line).get<Example>());
    } catch (const json::exception& e) {
      return make_error(Errc::parse_error,
                        path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Corpus::from_examples(std::move(examples));
}

inline Result<void> save_corpus(const std::vector<Example>& examples,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) return make_error(Errc::io_error, "cannot write corpus " + path.string());
  for (const Example& e : examples) out << json(e).dump() << "\n";
  if (!out.good()) return make_error(Errc::io_error, "short write to " + path.string());
  return ok_result();
}

struct CorpusSplit {
  std::vector<Example> train;
  std::vector<Example> test;
};

/// Per-dataset split: shuffle, take train_n (per-dataset overrides win) for
/// training, cap the remainder as the test set. Deterministic under the seed;
/// datasets are processed in sorted id order.
inline Result<CorpusSplit> split_corpus(const Corpus& corpus, int per_dataset_train_n,
                                        int test_cap, std::uint64_t seed,
                                        const std::map<std::string, int>& train_overrides = {}) {
  if (per_dataset_train_n < 1)
    return make_error(Errc::config_error, "per_dataset_train_n must be >= 1");
  if (test_cap < 1) return make_error(Errc::config_error, "test_cap must be >= 1");

  std::map<std::string, std::vector<Example>> by_dataset;
  for (const Example& e : corpus.examples) by_dataset[e.dataset_id].push_back(e);

  std::mt19937_64 rng(seed);
  CorpusSplit split;
  for (auto& [dataset_id, members] : by_dataset) {
    auto it = train_overrides.find(dataset_id);
    const std::size_t train_n =
        static_cast<std::size_t>(it != train_overrides.end() ? it->second : per_dataset_train_n);
    if (members.size() <= train_n)
      return make_error(Errc::dataset_too_small,
                        "dataset " + dataset_id + " has " + std::to_string(members.size()) +
                            " examples, needs more than " + std::to_string(train_n));
    deterministic_shuffle(members, rng);
    split.train.insert(split.train.end(), members.begin(),
                       members.begin() + static_cast<std::ptrdiff_t>(train_n));
    const std::size_t test_n = std::min(members.size() - train_n, static_cast<std::size_t>(test_cap));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(train_n),
                      members.begin() + static_cast<std::ptrdiff_t>(train_n + test_n));
  }
  return split;
}

}  // namespace clue
