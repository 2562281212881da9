// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clue/concurrency.hpp"
#include "clue/domain.hpp"
#include "clue/result.hpp"
#include "clue/text.hpp"

namespace clue {

// ---------------------------------------------------------------------------
// Requests and responses

enum class RoleTag {
  extractor,
  generator,
  summarizer,
  cluster_manager,
  cluster_analyzer,
  proposer,
  judge,
};

inline const char* role_tag_name(RoleTag t) {
  switch (t) {
    case RoleTag::extractor: return "extractor";
    case RoleTag::generator: return "generator";
    case RoleTag::summarizer: return "summarizer";
    case RoleTag::cluster_manager: return "cluster_manager";
    case RoleTag::cluster_analyzer: return "cluster_analyzer";
    case RoleTag::proposer: return "proposer";
    case RoleTag::judge: return "judge";
  }
  return "extractor";
}

inline Result<RoleTag> role_tag_from_string(std::string_view s) {
  for (RoleTag t : {RoleTag::extractor, RoleTag::generator, RoleTag::summarizer,
                    RoleTag::cluster_manager, RoleTag::cluster_analyzer, RoleTag::proposer,
                    RoleTag::judge}) {
    if (s == role_tag_name(t)) return t;
  }
  return make_error(Errc::parse_error, "unknown role tag: " + std::string(s));
}

inline bool is_optimizer_role(RoleTag t) {
  return t == RoleTag::summarizer || t == RoleTag::cluster_manager ||
         t == RoleTag::cluster_analyzer || t == RoleTag::proposer;
}

struct DecodeParams {
  double temperature = 0.7;
  int max_tokens = 4096;
  std::optional<unsigned> seed;

  bool operator==(const DecodeParams&) const = default;
};

struct ChatRequest {
  RoleTag role_tag = RoleTag::extractor;
  std::string system_text;
  std::string user_text;
  DecodeParams decode;
};

struct TokenUsage {
  long prompt = 0;
  long completion = 0;
};

struct ChatResponse {
  std::string text;
  std::string finish_reason = "stop";
  TokenUsage token_usage;
};

/// Stable key for scripted lookup and replay: role-independent content hash of
/// the two text fields.
inline std::string request_fingerprint(std::string_view system_text, std::string_view user_text) {
  std::string buffer;
  buffer.reserve(system_text.size() + user_text.size() + 1);
  buffer.append(system_text);
  buffer.push_back('\x1e');
  buffer.append(user_text);
  return to_hex(fnv1a64(buffer));
}

inline std::string request_fingerprint(const ChatRequest& req) {
  return request_fingerprint(req.system_text, req.user_text);
}

// ---------------------------------------------------------------------------
// Backend interface

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Result<ChatResponse> chat(const ChatRequest& request) = 0;
  virtual Result<std::vector<double>> embed_text(std::string_view text) = 0;
};

// ---------------------------------------------------------------------------
// Tool loop

struct ToolCall {
  std::string name;
  json arguments;
};

/// One transcript entry: either a tool call (with its result) or final text.
struct ToolLoopStep {
  std::string model_text;
  std::optional<ToolCall> call;   // engaged iff this step invoked a tool
  std::string tool_result;        // empty for final steps
};

struct ToolLoopResult {
  std::string final_text;
  std::vector<ToolLoopStep> transcript;
  bool forced_final = false;  // step budget exhausted before a natural final reply
};

using ToolHandler = std::function<std::string(const json& arguments)>;
using ToolMap = std::map<std::string, ToolHandler>;

/// Finds the first JSON object in the reply carrying a "tool" key. Models often
/// wrap calls in fences or prose, so every balanced object is probed in order.
inline std::optional<ToolCall> parse_tool_call(std::string_view reply) {
  std::size_t pos = reply.find('{');
  while (pos != std::string_view::npos) {
    const std::size_t end = detail::scan_balanced(reply, pos, '{', '}');
    if (end == std::string_view::npos) break;
    const auto parsed = json::parse(reply.substr(pos, end - pos), nullptr, false);
    if (parsed.is_object() && parsed.contains("tool") && parsed["tool"].is_string()) {
      ToolCall call;
      call.name = parsed["tool"].get<std::string>();
      call.arguments = parsed.value("arguments", json::object());
      return call;
    }
    pos = reply.find('{', end);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Gateway

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
};

/// Single entry point for all model traffic. Owns the usage counters:
/// optimizer roles count toward optimization_llm_calls, the generator toward
/// evaluation_calls, extractor and judge separately. Retries transient
/// failures with exponential backoff. Thread-safe.
class Gateway {
 public:
  using SleepFn = std::function<void(std::chrono::milliseconds)>;

  explicit Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {},
                   SleepFn sleep = default_sleep())
      : backend_(std::move(backend)), retry_(retry), sleep_(std::move(sleep)) {}

  /// Requests that leave DecodeParams untouched inherit the gateway-level
  /// defaults (set from config); explicit per-request values always win.
  void set_default_decode(const DecodeParams& decode) { default_decode_ = decode; }

  Result<ChatResponse> complete(const ChatRequest& request) {
    count_call(request.role_tag);
    ChatRequest effective = request;
    if (effective.decode == DecodeParams{}) effective.decode = default_decode_;
    Error last = make_error(Errc::endpoint_unavailable, "no attempt made");
    for (int attempt = 0; attempt < retry_.max_attempts; ++attempt) {
      if (attempt > 0) sleep_(retry_.backoff_base * (1 << (attempt - 1)));
      auto result = backend_->chat(effective);
      if (result.ok()) {
        if (result->finish_reason != "error" && trim(result->text).empty())
          return make_error(Errc::response_empty,
                            std::string("empty completion for role ") +
                                role_tag_name(request.role_tag));
        return result;
      }
      last = result.error();
      if (!last.transient) return last;
    }
    return make_error(Errc::budget_exceeded,
                      "retries exhausted after " + std::to_string(retry_.max_attempts) +
                          " attempts; last: " + last.to_string());
  }

  /// Responses are positionally aligned with requests; per-request errors do
  /// not abort siblings. At most max_in_flight requests are outstanding.
  std::vector<Result<ChatResponse>> complete_many(const std::vector<ChatRequest>& requests,
                                                  std::size_t max_in_flight) {
    std::vector<Result<ChatResponse>> responses(
        requests.size(), Result<ChatResponse>(make_error(Errc::response_empty, "not executed")));
    parallel_for(requests.size(), max_in_flight,
                 [&](std::size_t i) { responses[i] = complete(requests[i]); });
    return responses;
  }

  /// Scratchpad-style tool loop: each assistant reply and tool result is
  /// appended to the user text of the next request, so backends only ever see
  /// a (system, user) pair. Stops on a reply without a tool call, or after
  /// max_steps with forced_final set.
  Result<ToolLoopResult> run_tool_loop(const ChatRequest& request, const ToolMap& tools,
                                       int max_steps) {
    ToolLoopResult out;
    ChatRequest current = request;
    for (int step = 0; step < max_steps; ++step) {
      auto response = complete(current);
      if (!response.ok()) return response.error();

      auto call = parse_tool_call(response->text);
      if (!call) {
        out.transcript.push_back({response->text, std::nullopt, ""});
        out.final_text = response->text;
        return out;
      }

      auto handler = tools.find(call->name);
      if (handler == tools.end())
        return make_error(Errc::unknown_tool, call->name);

      ToolLoopStep entry;
      entry.model_text = response->text;
      entry.call = *call;
      entry.tool_result = handler->second(call->arguments);
      current.user_text += "\n\n<assistant>\n" + response->text + "\n</assistant>\n\n" +
                           "<tool_result name=\"" + call->name + "\">\n" + entry.tool_result +
                           "\n</tool_result>\n\nContinue.";
      out.transcript.push_back(std::move(entry));
      out.final_text = response->text;
    }
    out.forced_final = true;  // StepBudgetExhausted: partial transcript retained
    return out;
  }

  Result<std::vector<double>> embed(std::string_view text) {
    if (text.empty()) return make_error(Errc::response_empty, "embed: empty text");
    return backend_->embed_text(text);
  }

  UsageCounters usage() const {
    UsageCounters u;
    u.optimization_llm_calls = optimization_.load();
    u.evaluation_calls = evaluation_.load();
    u.extraction_llm_calls = extraction_.load();
    u.judge_llm_calls = judge_.load();
    u.wall_time = std::chrono::milliseconds(wall_time_ms_.load());
    return u;
  }

  void add_wall_time(std::chrono::milliseconds ms) { wall_time_ms_.fetch_add(ms.count()); }

  Backend& backend() { return *backend_; }

  static SleepFn default_sleep() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

 private:
  void count_call(RoleTag tag) {
    if (is_optimizer_role(tag)) {
      optimization_.fetch_add(1);
    } else if (tag == RoleTag::generator) {
      evaluation_.fetch_add(1);
    } else if (tag == RoleTag::extractor) {
      extraction_.fetch_add(1);
    } else {
      judge_.fetch_add(1);
    }
  }

  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  SleepFn sleep_;
  DecodeParams default_decode_;
  std::atomic<long> optimization_{0};
  std::atomic<long> evaluation_{0};
  std::atomic<long> extraction_{0};
  std::atomic<long> judge_{0};
  std::atomic<long> wall_time_ms_{0};
};

}  // namespace clue
