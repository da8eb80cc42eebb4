#pragma once

#include <stdexcept>
#include <string>

namespace crl {

enum class ErrorKind {
  InvalidInput,
  InvalidParameter,
  Dimension,
  Config,
  Label,
  Parse,
  Divergence,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::InvalidParameter: return "invalid parameter";
    case ErrorKind::Dimension: return "dimension mismatch";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Label: return "label error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace crl
