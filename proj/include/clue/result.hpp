// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace clue {

enum class Errc {
  endpoint_unavailable,
  budget_exceeded,
  response_empty,
  unknown_tool,
  step_budget_exhausted,
  unparsable_response,
  unknown_external_verifier,
  duplicate_task_id,
  invalid_example,
  parse_error,
  log_not_found,
  empty_dataset,
  empty_report,
  key_mismatch,
  all_excluded,
  dataset_too_small,
  proposal_failed,
  unparsable_cluster_json,
  missing_base_report,
  access_denied,
  io_error,
  config_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::endpoint_unavailable: return "EndpointUnavailable";
    case Errc::budget_exceeded: return "BudgetExceeded";
    case Errc::response_empty: return "ResponseEmpty";
    case Errc::unknown_tool: return "UnknownTool";
    case Errc::step_budget_exhausted: return "StepBudgetExhausted";
    case Errc::unparsable_response: return "UnparsableResponse";
    case Errc::unknown_external_verifier: return "UnknownExternalVerifier";
    case Errc::duplicate_task_id: return "DuplicateTaskId";
    case Errc::invalid_example: return "InvalidExample";
    case Errc::parse_error: return "ParseError";
    case Errc::log_not_found: return "LogNotFound";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::empty_report: return "EmptyReport";
    case Errc::key_mismatch: return "KeyMismatch";
    case Errc::all_excluded: return "AllExcluded";
    case Errc::dataset_too_small: return "DatasetTooSmall";
    case Errc::proposal_failed: return "ProposalFailed";
    case Errc::unparsable_cluster_json: return "UnparsableClusterJson";
    case Errc::missing_base_report: return "MissingBaseReport";
    case Errc::access_denied: return "AccessDenied";
    case Errc::io_error: return "IoError";
    case Errc::config_error: return "ConfigError";
  }
  return "UnknownError";
}

struct Error {
  Errc code;
  std::string message;
  bool transient = false;  // retry-eligible (rate limits, connection drops)

  std::string to_string() const { return std::string(errc_name(code)) + ": " + message; }
};

inline Error make_error(Errc code, std::string message) { return Error{code, std::move(message)}; }

inline Error make_transient_error(Errc code, std::string message) {
  return Error{code, std::move(message), true};
}

/// Expected-like value-or-error carrier (the toolchain's C++20 library ships no
/// std::expected). Accessing value() on an error state throws std::logic_error.
template <typename T>
class [[nodiscard]] Result {
 public:
  Result(T value) : data_(std::move(value)) {}
  Result(Error error) : data_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<T>(data_); }
  explicit operator bool() const { return ok(); }

  T& value() & {
    ensure_ok();
    return std::get<T>(data_);
  }
  const T& value() const& {
    ensure_ok();
    return std::get<T>(data_);
  }
  T&& value() && {
    ensure_ok();
    return std::get<T>(std::move(data_));
  }

  const Error& error() const { return std::get<Error>(data_); }

  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }
  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }

 private:
  void ensure_ok() const {
    if (!ok()) throw std::logic_error("Result accessed on error: " + error().to_string());
  }

  std::variant<T, Error> data_;
};

template <>
class [[nodiscard]] Result<void> {
 public:
  Result() = default;
  Result(Error error) : error_(std::move(error)), has_error_(true) {}

  bool ok() const { return !has_error_; }
  explicit operator bool() const { return ok(); }
  const Error& error() const { return error_; }

 private:
  Error error_{};
  bool has_error_ = false;
};

inline Result<void> ok_result() { return Result<void>(); }

}  // namespace clue
