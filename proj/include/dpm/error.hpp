#pragma once

#include <stdexcept>
#include <string>

namespace dpm {

// Error categories map one-to-one onto CLI exit codes:
// usage/contract -> 1, data/protocol/format/io -> 2, numeric -> 3.
enum class ErrorKind {
  contract,   // precondition violated by the caller
  usage,      // bad flags or configuration keys
  io,         // file missing or unwritable
  format,     // malformed or unsupported file contents
  protocol,   // evaluation protocol cannot be satisfied
  alignment,  // degenerate landmark geometry
  numeric,    // divergence or invariant violation on load
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::contract:
    case ErrorKind::usage:
      return 1;
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::protocol:
    case ErrorKind::alignment:
      return 2;
    case ErrorKind::numeric:
      return 3;
  }
  return 2;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::contract, what);
}

}  // namespace dpm
