#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace corerank {

enum class ErrorCode {
  invalid_argument,
  empty_input,
  config,
  head_out_of_range,
  layer_not_materialized,
  unknown_document,
  mismatch,
  budget_exceeded,
  insufficient_survivors,
  unsorted_input,
  io,
  parse,
  bad_magic,
  version_mismatch,
  truncated_payload,
  trailing_bytes,
  dim_layout_mismatch,
  provider_failure,
  unsupported,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::config: return "config";
    case ErrorCode::head_out_of_range: return "head_out_of_range";
    case ErrorCode::layer_not_materialized: return "layer_not_materialized";
    case ErrorCode::unknown_document: return "unknown_document";
    case ErrorCode::mismatch: return "mismatch";
    case ErrorCode::budget_exceeded: return "budget_exceeded";
    case ErrorCode::insufficient_survivors: return "insufficient_survivors";
    case ErrorCode::unsorted_input: return "unsorted_input";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::truncated_payload: return "truncated_payload";
    case ErrorCode::trailing_bytes: return "trailing_bytes";
    case ErrorCode::dim_layout_mismatch: return "dim_layout_mismatch";
    case ErrorCode::provider_failure: return "provider_failure";
    case ErrorCode::unsupported: return "unsupported";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace corerank
