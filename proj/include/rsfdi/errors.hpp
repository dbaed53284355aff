#pragma once

#include <stdexcept>
#include <string>

namespace rsfdi {

enum class ErrorCode {
  Reject,
  UnboundedTail,
  SpectrumHit,
  IncompatibleTruncation,
  UnverifiedTail,
  NoConvergence,
  DomainViolation,
  SingularCw,
  InconsistentH,
  UnobservableUnstablePart,
  NoMargin,
  DecouplingFail,
  Unstable,
  Nonfinite,
  Validation,
  Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rsfdi
