#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace labwatch {

// One error category per failure class the CLI maps to an exit code.
enum class ErrorKind {
  Syntax,          // unparseable document (JSON, JSONL, script)
  Constraint,      // schema violation: unknown key, wrong type, bad enum token
  Reference,       // cross-reference names an id that does not exist
  NotFound,        // lookup by id failed
  MissingContent,  // prompt level requires a section whose source field is empty
  Decode,          // image bytes not decodable
  Io,              // file or stream failure
  Network,         // transport failure (retryable)
  Timeout,         // request deadline exceeded (retryable)
  Provider,        // provider-side error payload (retryable)
  Auth,            // credential rejected or missing (not retryable)
  Config,          // invalid configuration or precondition
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Syntax: return "syntax";
    case ErrorKind::Constraint: return "constraint";
    case ErrorKind::Reference: return "reference";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::MissingContent: return "missing-content";
    case ErrorKind::Decode: return "decode";
    case ErrorKind::Io: return "io";
    case ErrorKind::Network: return "network";
    case ErrorKind::Timeout: return "timeout";
    case ErrorKind::Provider: return "provider";
    case ErrorKind::Auth: return "auth";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Transient errors are worth another attempt; auth and config errors are not.
  bool retryable() const noexcept {
    return kind_ == ErrorKind::Network || kind_ == ErrorKind::Timeout ||
           kind_ == ErrorKind::Provider;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace labwatch
