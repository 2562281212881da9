// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/gateway.hpp"
#include "clue/result.hpp"
#include "clue/text.hpp"

namespace clue {

/// One scripted response. Matches on the request fingerprint or on a substring
/// of system+user text; fail_times > 0 makes the entry fail transiently that
/// many times before answering (for retry tests).
struct ScriptedRule {
  std::optional<std::string> fingerprint;
  std::optional<std::string> contains;
  std::string response;
  int fail_times = 0;
};

/// Deterministic stand-in for every model role. Lookup order per role:
/// keyed rules (first match), then the C++ handler, then the ordered fallback
/// script, then the role default. A role with none of these configured is an
/// unconfigured endpoint. Embeddings are feature-hashed character trigrams
/// (version "fh1-3gram"), L2-normalized, so identical text always embeds
/// identically.
class ScriptedBackend final : public Backend {
 public:
  static constexpr const char* kEmbeddingVersion = "fh1-3gram";
  using Handler = std::function<std::string(const ChatRequest&)>;

  void add_rule(RoleTag role, ScriptedRule rule) {
    std::lock_guard<std::mutex> lock(mutex_);
    roles_[role].rules.push_back(std::move(rule));
  }

  void add_contains_rule(RoleTag role, std::string contains, std::string response) {
    add_rule(role, ScriptedRule{std::nullopt, std::move(contains), std::move(response), 0});
  }

  void add_fingerprint_rule(RoleTag role, std::string fingerprint, std::string response) {
    add_rule(role, ScriptedRule{std::move(fingerprint), std::nullopt, std::move(response), 0});
  }

  void push_script(RoleTag role, std::string response) {
    std::lock_guard<std::mutex> lock(mutex_);
    roles_[role].script.push_back(std::move(response));
  }

  void set_default_response(RoleTag role, std::string response) {
    std::lock_guard<std::mutex> lock(mutex_);
    roles_[role].default_response = std::move(response);
  }

  void set_handler(RoleTag role, Handler handler) {
    std::lock_guard<std::mutex> lock(mutex_);
    roles_[role].handler = std::move(handler);
  }

  void set_embedding_dim(std::size_t dim) { embedding_dim_ = dim == 0 ? 1 : dim; }
  std::size_t embedding_dim() const { return embedding_dim_; }

  Result<ChatResponse> chat(const ChatRequest& request) override {
    std::unique_lock<std::mutex> lock(mutex_);
    auto it = roles_.find(request.role_tag);
    if (it == roles_.end())
      return make_error(Errc::endpoint_unavailable,
                        std::string("no scripted endpoint for role ") +
                            role_tag_name(request.role_tag));
    RoleScript& role = it->second;

    const std::string fp = request_fingerprint(request);
    const std::string haystack = request.system_text + "\x1e" + request.user_text;
    for (auto& rule : role.rules) {
      const bool matches = (rule.fingerprint && *rule.fingerprint == fp) ||
                           (rule.contains && haystack.find(*rule.contains) != std::string::npos);
      if (!matches) continue;
      if (rule.fail_times > 0) {
        --rule.fail_times;
        return make_transient_error(Errc::endpoint_unavailable, "scripted transient failure");
      }
      return ChatResponse{rule.response, "stop", {}};
    }

    if (role.handler) {
      Handler handler = role.handler;
      lock.unlock();  // handlers may re-enter the backend (e.g. to embed)
      return ChatResponse{handler(request), "stop", {}};
    }

    if (!role.script.empty()) {
      std::string response = std::move(role.script.front());
      role.script.pop_front();
      return ChatResponse{std::move(response), "stop", {}};
    }

    if (role.default_response)
      return ChatResponse{*role.default_response, "stop", {}};

    return make_error(Errc::response_empty,
                      std::string("scripted backend has no response for role ") +
                          role_tag_name(request.role_tag) + " (fingerprint " + fp + ")");
  }

  Result<std::vector<double>> embed_text(std::string_view text) override {
    return hash_embedding(text, embedding_dim_);
  }

  /// Feature hashing of character 3-grams with hash-sign, L2-normalized.
  /// Texts shorter than 3 chars hash as a single gram.
  static std::vector<double> hash_embedding(std::string_view text, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    auto add_gram = [&](std::string_view gram) {
      const std::uint64_t h = fnv1a64(gram);
      const double sign = (h >> 63) ? -1.0 : 1.0;
      v[h % dim] += sign;
    };
    if (text.size() < 3) {
      add_gram(text);
    } else {
      for (std::size_t i = 0; i + 3 <= text.size(); ++i) add_gram(text.substr(i, 3));
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  /// Loads the --mock script file: {"embedding_dim": 64, "rules": [...],
  /// "scripts": {role: [...]}, "defaults": {role: "..."}}.
  static Result<std::shared_ptr<ScriptedBackend>> from_json(const json& j) {
    auto backend = std::make_shared<ScriptedBackend>();
    if (!j.is_object()) return make_error(Errc::parse_error, "mock script must be a JSON object");
    if (j.contains("embedding_dim")) backend->set_embedding_dim(j.at("embedding_dim").get<std::size_t>());
    for (const auto& entry : j.value("rules", json::array())) {
      auto role = role_tag_from_string(entry.at("role").get<std::string>());
      if (!role.ok()) return role.error();
      ScriptedRule rule;
      if (entry.contains("fingerprint")) rule.fingerprint = entry.at("fingerprint").get<std::string>();
      if (entry.contains("contains")) rule.contains = entry.at("contains").get<std::string>();
      if (!rule.fingerprint && !rule.contains)
        return make_error(Errc::parse_error, "mock rule needs a fingerprint or contains matcher");
      rule.response = entry.at("response").get<std::string>();
      rule.fail_times = entry.value("fail_times", 0);
      backend->add_rule(role.value(), std::move(rule));
    }
    if (j.contains("scripts")) {
      for (const auto& [name, list] : j.at("scripts").items()) {
        auto role = role_tag_from_string(name);
        if (!role.ok()) return role.error();
        for (const auto& response : list) backend->push_script(role.value(), response.get<std::string>());
      }
    }
    if (j.contains("defaults")) {
      for (const auto& [name, response] : j.at("defaults").items()) {
        auto role = role_tag_from_string(name);
        if (!role.ok()) return role.error();
        backend->set_default_response(role.value(), response.get<std::string>());
      }
    }
    return backend;
  }

 private:
  struct RoleScript {
    std::vector<ScriptedRule> rules;
    std::deque<std::string> script;
    std::optional<std::string> default_response;
    Handler handler;
  };

  std::map<RoleTag, RoleScript> roles_;
  std::size_t embedding_dim_ = 64;
  mutable std::mutex mutex_;
};

}  // namespace clue
