#include "rsfdi/errors.hpp"

namespace rsfdi {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Reject: return "REJECT";
    case ErrorCode::UnboundedTail: return "UNBOUNDED_TAIL";
    case ErrorCode::SpectrumHit: return "SPECTRUM_HIT";
    case ErrorCode::IncompatibleTruncation: return "INCOMPATIBLE_TRUNCATION";
    case ErrorCode::UnverifiedTail: return "UNVERIFIED_TAIL";
    case ErrorCode::NoConvergence: return "NO_CONVERGENCE";
    case ErrorCode::DomainViolation: return "DOMAIN_VIOLATION";
    case ErrorCode::SingularCw: return "SINGULAR_CW";
    case ErrorCode::InconsistentH: return "INCONSISTENT_H";
    case ErrorCode::UnobservableUnstablePart: return "UNOBSERVABLE_UNSTABLE_PART";
    case ErrorCode::NoMargin: return "NO_MARGIN";
    case ErrorCode::DecouplingFail: return "DECOUPLING_FAIL";
    case ErrorCode::Unstable: return "UNSTABLE";
    case ErrorCode::Nonfinite: return "NONFINITE";
    case ErrorCode::Validation: return "VALIDATION";
    case ErrorCode::Io: return "IO";
  }
  return "UNKNOWN";
}

}  // namespace rsfdi
