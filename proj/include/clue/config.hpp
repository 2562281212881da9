// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "clue/evolver.hpp"
#include "clue/gateway.hpp"
#include "clue/http_backend.hpp"
#include "clue/result.hpp"

namespace clue {

inline void to_json(json& j, const DecodeParams& d) {
  j = json{{"temperature", d.temperature}, {"max_tokens", d.max_tokens}};
  if (d.seed) j["seed"] = *d.seed;
}

inline void from_json(const json& j, DecodeParams& d) {
  DecodeParams defaults;
  d.temperature = j.value("temperature", defaults.temperature);
  d.max_tokens = j.value("max_tokens", defaults.max_tokens);
  if (j.contains("seed")) d.seed = j.at("seed").get<unsigned>();
}

/// Everything one run needs, in a single self-describing file: evolution
/// knobs, decode defaults, endpoints per role, paths, and the concurrency
/// limit. Secrets never live here — API keys come from the environment
/// variable each endpoint names.
struct HarnessConfig {
  EvolutionConfig evolution;
  DecodeParams decode;
  EndpointConfig default_endpoint;
  std::map<std::string, EndpointConfig> role_endpoints;  // keyed by role tag name
  std::size_t max_in_flight = 8;
  int test_cap = 200;  // split cap; test sets at/above it evaluate once, below it repeat
  std::string logs_dir = "runs/logs";
  std::string output_dir = "runs";
};

inline void to_json(json& j, const HarnessConfig& c) {
  j = json{{"evolution", c.evolution},
           {"decode", c.decode},
           {"default_endpoint", c.default_endpoint},
           {"role_endpoints", c.role_endpoints},
           {"max_in_flight", c.max_in_flight},
           {"test_cap", c.test_cap},
           {"logs_dir", c.logs_dir},
           {"output_dir", c.output_dir}};
}

inline void from_json(const json& j, HarnessConfig& c) {
  HarnessConfig defaults;
  c.evolution = j.value("evolution", defaults.evolution);
  c.decode = j.value("decode", defaults.decode);
  c.default_endpoint = j.value("default_endpoint", defaults.default_endpoint);
  c.role_endpoints = j.value("role_endpoints", std::map<std::string, EndpointConfig>{});
  c.max_in_flight = j.value("max_in_flight", defaults.max_in_flight);
  c.test_cap = j.value("test_cap", defaults.test_cap);
  c.logs_dir = j.value("logs_dir", defaults.logs_dir);
  c.output_dir = j.value("output_dir", defaults.output_dir);
}

inline Result<HarnessConfig> load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::config_error, "cannot read config " + path.string());
  try {
    return json::parse(in).get<HarnessConfig>();
  } catch (const json::exception& e) {
    return make_error(Errc::config_error, "bad config " + path.string() + ": " + e.what());
  }
}

}  // namespace clue
