// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clue/domain.hpp"
#include "clue/evolver.hpp"
#include "clue/result.hpp"

#ifndef CLUE_ASSET_DIR
#define CLUE_ASSET_DIR "assets"
#endif

namespace clue {

/// Built-in extraction prompt ids, resolvable anywhere a prompt is expected.
inline const std::vector<std::string>& builtin_prompt_ids() {
  static const std::vector<std::string> ids = {"simple", "mem0", "reasoningbank", "openmemory",
                                               "survey"};
  return ids;
}

/// Pseudo-prompt id selecting the baseline that injects no memory at all.
inline constexpr std::string_view kNoMemoryPromptId = "no_memory";

/// Asset root: the CLUE_ASSET_DIR environment variable wins, then the
/// build-time default.
inline std::filesystem::path asset_dir() {
  if (const char* env = std::getenv("CLUE_ASSET_DIR"); env && *env)
    return std::filesystem::path(env);
  return std::filesystem::path(CLUE_ASSET_DIR);
}

inline Result<std::string> read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return make_error(Errc::io_error, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline Result<std::string> load_prompt_asset(const std::string& prompt_id) {
  for (const std::string& id : builtin_prompt_ids())
    if (id == prompt_id) return read_text_file(asset_dir() / "prompts" / (prompt_id + ".txt"));
  std::string known;
  for (const std::string& id : builtin_prompt_ids()) known += (known.empty() ? "" : ", ") + id;
  return make_error(Errc::config_error,
                    "unknown prompt id \"" + prompt_id + "\" (known: " + known + ")");
}

inline Result<std::string> load_template_asset(const std::string& name) {
  return read_text_file(asset_dir() / "templates" / (name + ".txt"));
}

/// Turns a --prompt argument into a candidate: a built-in id loads the
/// shipped asset; anything else is treated as a path to a prompt text file
/// whose stem becomes the prompt id.
inline Result<PromptCandidate> resolve_prompt(const std::string& id_or_path) {
  PromptCandidate prompt;
  prompt.provenance = Provenance::seed_asset;
  for (const std::string& id : builtin_prompt_ids()) {
    if (id == id_or_path) {
      auto text = load_prompt_asset(id);
      if (!text.ok()) return text.error();
      prompt.prompt_id = id;
      prompt.text = text.value();
      return prompt;
    }
  }
  const std::filesystem::path path(id_or_path);
  if (!std::filesystem::exists(path))
    return make_error(Errc::config_error,
                      "\"" + id_or_path + "\" is neither a built-in prompt id nor a file");
  auto text = read_text_file(path);
  if (!text.ok()) return text.error();
  prompt.prompt_id = path.stem().string();
  prompt.text = text.value();
  if (prompt.prompt_id.empty()) prompt.prompt_id = "file_prompt";
  return prompt;
}

inline Result<EvolverAssets> load_evolver_assets() {
  EvolverAssets assets;
  struct Slot {
    std::string name;
    std::string* target;
  };
  const Slot slots[] = {{"summarizer", &assets.summarizer},
                        {"cluster_manager", &assets.cluster_manager},
                        {"cluster_analyzer", &assets.cluster_analyzer},
                        {"proposer", &assets.proposer},
                        {"tool_protocol", &assets.tool_protocol}};
  for (const Slot& slot : slots) {
    auto text = load_template_asset(slot.name);
    if (!text.ok()) return text.error();
    *slot.target = text.value();
  }
  return assets;
}

}  // namespace clue
