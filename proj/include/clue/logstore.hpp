// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/domain.hpp"
#include "clue/result.hpp"
#include "clue/text.hpp"

namespace clue {

/// Identifies one persisted pair log. `attempt` separates repeated runs of
/// the same (round, prompt, task) triple: repetition index during evaluation,
/// and the tournament re-evaluation pass during evolution.
struct LogKey {
  int round = 0;
  std::string prompt_id;
  std::string task_id;
  int attempt = 0;

  auto tie() const { return std::tie(round, prompt_id, task_id, attempt); }
  bool operator<(const LogKey& other) const { return tie() < other.tie(); }
  bool operator==(const LogKey& other) const { return tie() == other.tie(); }
};

/// Directory-backed store of pair logs, one JSON document per log under
/// root/round_R/prompt_P/task_T.json (suffix _repN for attempt > 0), plus an
/// index.json mapping keys to files. Writes go through a temp file + rename
/// so readers never observe a torn document.
class LogStore {
 public:
  explicit LogStore(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    load_index();
  }

  const std::filesystem::path& root() const { return root_; }

  Result<void> write(const PairLog& log, int attempt = 0) {
    if (auto valid = validate(log); !valid.ok()) return valid.error();
    const LogKey key{log.round, log.prompt_id, log.task_id, attempt};
    const std::filesystem::path rel = relative_path(key);

    std::lock_guard<std::mutex> lock(mutex_);
    std::error_code ec;
    std::filesystem::create_directories(root_ / rel.parent_path(), ec);
    if (ec) return make_error(Errc::io_error, "cannot create " + (root_ / rel.parent_path()).string());

    auto written = atomic_write(root_ / rel, json(log).dump(2));
    if (!written.ok()) return written;
    index_[key] = rel.generic_string();
    return save_index();
  }

  Result<PairLog> read(const std::string& task_id, int round, const std::string& prompt_id,
                       int attempt = 0) const {
    const LogKey key{round, prompt_id, task_id, attempt};
    std::string rel;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = index_.find(key);
      if (it == index_.end())
        return make_error(Errc::log_not_found,
                          "no log for task " + task_id + " round " + std::to_string(round) +
                              " prompt " + prompt_id);
      rel = it->second;
    }
    std::ifstream in(root_ / rel);
    if (!in) return make_error(Errc::io_error, "cannot open " + (root_ / rel).string());
    try {
      json j = json::parse(in);
      return j.get<PairLog>();
    } catch (const json::exception& e) {
      return make_error(Errc::parse_error, "corrupt log " + rel + ": " + e.what());
    }
  }

  /// Re-persists a log with its summarizer output attached.
  Result<void> attach_summary(const std::string& task_id, int round, const std::string& prompt_id,
                              const std::string& summary, int attempt = 0) {
    auto log = read(task_id, round, prompt_id, attempt);
    if (!log.ok()) return log.error();
    log.value().summary = summary;
    return write(log.value(), attempt);
  }

  /// Keys in deterministic (round, prompt, task, attempt) order, optionally
  /// filtered by round and/or prompt id.
  std::vector<LogKey> list(std::optional<int> round = std::nullopt,
                           std::optional<std::string> prompt_id = std::nullopt) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<LogKey> keys;
    for (const auto& [key, _] : index_) {
      if (round && key.round != *round) continue;
      if (prompt_id && key.prompt_id != *prompt_id) continue;
      keys.push_back(key);
    }
    return keys;
  }

 private:
  std::filesystem::path relative_path(const LogKey& key) const {
    std::string file = "task_" + sanitize(key.task_id);
    if (key.attempt != 0) file += "_rep" + std::to_string(key.attempt);
    file += ".json";
    return std::filesystem::path("round_" + std::to_string(key.round)) /
           ("prompt_" + sanitize(key.prompt_id)) / file;
  }

  /// Task/prompt ids are opaque; anything path-hostile is replaced and a hash
  /// suffix keeps distinct ids from colliding after replacement.
  static std::string sanitize(const std::string& id) {
    std::string out;
    bool changed = false;
    for (char c : id) {
      const bool safe = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
      out.push_back(safe ? c : '_');
      changed = changed || !safe;
    }
    if (changed) out += "_" + to_hex(fnv1a64(id)).substr(8);
    return out;
  }

  static Result<void> atomic_write(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) return make_error(Errc::io_error, "cannot write " + tmp.string());
      out << content;
      if (!out.good()) return make_error(Errc::io_error, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) return make_error(Errc::io_error, "rename failed for " + path.string());
    return ok_result();
  }

  Result<void> save_index() {
    json entries = json::array();
    for (const auto& [key, rel] : index_)
      entries.push_back(json{{"round", key.round},
                             {"prompt_id", key.prompt_id},
                             {"task_id", key.task_id},
                             {"attempt", key.attempt},
                             {"path", rel}});
    return atomic_write(root_ / "index.json", entries.dump(2));
  }

  void load_index() {
    std::ifstream in(root_ / "index.json");
    if (!in) return;
    try {
      json entries = json::parse(in);
      for (const auto& e : entries) {
        LogKey key{e.at("round").get<int>(), e.at("prompt_id").get<std::string>(),
                   e.at("task_id").get<std::string>(), e.value("attempt", 0)};
        index_[key] = e.at("path").get<std::string>();
      }
    } catch (const json::exception&) {
      index_.clear();  // unreadable index: start fresh, logs stay on disk
    }
  }

  std::filesystem::path root_;
  std::map<LogKey, std::string> index_;
  mutable std::mutex mutex_;
};

}  // namespace clue
