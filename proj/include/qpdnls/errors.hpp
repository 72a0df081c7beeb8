#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qpdnls {

enum class ErrorCode {
  InvalidArgument,
  GridMismatch,
  Overflow,
  WrongDiscreteCount,
  DegenerateGap,
  NearSingular,
  NotOrthogonal,
  NoConvergence,
  GapViolation,
  ShapeMismatch,
  TruncationOverflow,
  LadderViolation,
  NoContraction,
  TailTooLarge,
  AmplitudeMismatch,
  SmallnessViolation,
  SingularSystem,
  WindowTooLate,
  BlowupGuard,
  DecompositionLost,
  NonResonanceFailure,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. Every failure raised by the
/// library is an Error; the CLI maps codes onto process exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace qpdnls
