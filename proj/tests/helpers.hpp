// SPDX-License-Identifier: Apache-2.0
//
// Shared builders for the test suites: tiny valid domain objects and a
// fixture-file loader. Kept header-only so every test binary stays standalone.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "clue/domain.hpp"

#ifndef CLUE_FIXTURE_DIR
#define CLUE_FIXTURE_DIR "tests/fixtures"
#endif

namespace clue_test {

inline clue::Conversation make_conversation(const std::string& user_text,
                                            const std::string& assistant_text) {
  clue::Conversation c;
  c.messages.push_back({clue::Role::user, user_text});
  c.messages.push_back({clue::Role::assistant, assistant_text});
  return c;
}

inline clue::Example make_example(const std::string& task_id, const std::string& dataset_id,
                                  const std::string& gold) {
  clue::Example e;
  e.task_id = task_id;
  e.dataset_id = dataset_id;
  e.source_conversation =
      make_conversation("my favourite color is " + gold, "noted, I will remember that");
  e.target_query = "what is my favourite color?";
  e.reward_spec.payload = clue::ExactMatchSpec{gold};
  return e;
}

inline clue::PromptCandidate make_prompt(const std::string& id, const std::string& text) {
  clue::PromptCandidate p;
  p.prompt_id = id;
  p.text = text;
  return p;
}

inline std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(CLUE_FIXTURE_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Unique scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("clue_test_" + tag + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

}  // namespace clue_test
