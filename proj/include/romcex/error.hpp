#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace romcex {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kDomain,         // bad shape, index, or argument
  kValidation,     // configuration problems
  kConvergence,    // iteration cap reached
  kConditioning,   // jitter cap exceeded, singular reduced system
  kDegeneracy,     // eigenvalue cluster not separated
  kNotPsd,
  kWellPosedness,  // assembled PDE system is singular
  kCoercivity,
  kSupport,        // Bayes evidence underflow
  kSize,           // feature or system size cap
  kIo,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// True for failures of a numerical nature (exit code 3 in the CLI).
  bool is_numerical() const noexcept;

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace romcex
