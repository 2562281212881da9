// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "clue/gateway.hpp"
#include "clue/result.hpp"

namespace clue {

/// Where a model role's requests go. The API key is read from the named
/// environment variable at request time, never stored in config files.
struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string chat_path = "/v1/chat/completions";
  std::string embed_path = "/v1/embeddings";
  std::string model = "gpt-4o-mini";
  std::string embed_model = "text-embedding-3-small";
  std::string api_key_env = "CLUE_API_KEY";
  int timeout_seconds = 120;
};

inline void to_json(json& j, const EndpointConfig& c) {
  j = json{{"base_url", c.base_url},       {"chat_path", c.chat_path},
           {"embed_path", c.embed_path},   {"model", c.model},
           {"embed_model", c.embed_model}, {"api_key_env", c.api_key_env},
           {"timeout_seconds", c.timeout_seconds}};
}

inline void from_json(const json& j, EndpointConfig& c) {
  EndpointConfig defaults;
  c.base_url = j.value("base_url", defaults.base_url);
  c.chat_path = j.value("chat_path", defaults.chat_path);
  c.embed_path = j.value("embed_path", defaults.embed_path);
  c.model = j.value("model", defaults.model);
  c.embed_model = j.value("embed_model", defaults.embed_model);
  c.api_key_env = j.value("api_key_env", defaults.api_key_env);
  c.timeout_seconds = j.value("timeout_seconds", defaults.timeout_seconds);
}

/// Chat-completions backend speaking the common JSON wire format. Each role
/// can point at its own endpoint/model; unconfigured roles fall back to the
/// default endpoint. Connection failures and 429/5xx responses are transient
/// (the gateway retries them); other HTTP errors are not.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(EndpointConfig default_endpoint = {})
      : default_endpoint_(std::move(default_endpoint)) {}

  void set_role_endpoint(RoleTag role, EndpointConfig endpoint) {
    role_endpoints_[role] = std::move(endpoint);
  }

  const EndpointConfig& endpoint_for(RoleTag role) const {
    auto it = role_endpoints_.find(role);
    return it == role_endpoints_.end() ? default_endpoint_ : it->second;
  }

  Result<ChatResponse> chat(const ChatRequest& request) override {
    const EndpointConfig& ep = endpoint_for(request.role_tag);
    json body{{"model", ep.model},
              {"messages",
               json::array({json{{"role", "system"}, {"content", request.system_text}},
                            json{{"role", "user"}, {"content", request.user_text}}})},
              {"temperature", request.decode.temperature},
              {"max_tokens", request.decode.max_tokens}};
    if (request.decode.seed) body["seed"] = *request.decode.seed;

    auto raw = post_json(ep, ep.chat_path, body);
    if (!raw.ok()) return raw.error();
    json reply;
    try {
      reply = json::parse(raw.value());
      const json& choices = reply.at("choices");
      if (choices.empty()) return make_error(Errc::response_empty, "no choices in reply");
      ChatResponse response;
      response.text = choices.at(0).at("message").at("content").get<std::string>();
      response.finish_reason = choices.at(0).value("finish_reason", "stop");
      if (reply.contains("usage")) {
        response.token_usage.prompt = reply["usage"].value("prompt_tokens", 0L);
        response.token_usage.completion = reply["usage"].value("completion_tokens", 0L);
      }
      return response;
    } catch (const json::exception& e) {
      return make_error(Errc::parse_error, std::string("malformed chat reply: ") + e.what());
    }
  }

  Result<std::vector<double>> embed_text(std::string_view text) override {
    const EndpointConfig& ep = default_endpoint_;
    json body{{"model", ep.embed_model}, {"input", std::string(text)}};
    auto raw = post_json(ep, ep.embed_path, body);
    if (!raw.ok()) return raw.error();
    try {
      json reply = json::parse(raw.value());
      return reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      return make_error(Errc::parse_error, std::string("malformed embedding reply: ") + e.what());
    }
  }

 private:
  Result<std::string> post_json(const EndpointConfig& ep, const std::string& path,
                                const json& body) {
    httplib::Client client(ep.base_url);
    client.set_read_timeout(ep.timeout_seconds, 0);
    client.set_connection_timeout(10, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(ep.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
      return make_transient_error(Errc::endpoint_unavailable,
                                  ep.base_url + path + ": " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      return make_transient_error(Errc::endpoint_unavailable,
                                  "HTTP " + std::to_string(res->status) + " from " + path);
    if (res->status < 200 || res->status >= 300)
      return make_error(Errc::endpoint_unavailable,
                        "HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body);
    return res->body;
  }

  EndpointConfig default_endpoint_;
  std::map<RoleTag, EndpointConfig> role_endpoints_;
};

}  // namespace clue
