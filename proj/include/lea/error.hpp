#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lea {

enum class ErrorKind {
  validation,      // malformed values (non-finite, out of range)
  schema,          // shape / field / dimension mismatches
  checksum,        // sidecar or fixture checksum mismatch
  truncated,       // sidecar shorter than a declared region
  io,              // unreadable or unwritable file
  numerical_health // a_inconsistent above bound
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::schema: return "schema";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::io: return "io";
    case ErrorKind::numerical_health: return "numerical_health";
  }
  return "unknown";
}

/// Every failure raised by the library. `location()` names the offending
/// element (file, sequence/layer, row/column) when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string location = {})
      : std::runtime_error(location.empty() ? message : message + " [" + location + "]"),
        kind_(kind),
        message_(std::move(message)),
        location_(std::move(location)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }
  const std::string& location() const noexcept { return location_; }

 private:
  ErrorKind kind_;
  std::string message_;
  std::string location_;
};

inline Error validation_error(std::string msg, std::string loc = {}) {
  return {ErrorKind::validation, std::move(msg), std::move(loc)};
}
inline Error schema_error(std::string msg, std::string loc = {}) {
  return {ErrorKind::schema, std::move(msg), std::move(loc)};
}

}  // namespace lea
