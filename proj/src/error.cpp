#include "romcex/error.hpp"

namespace romcex {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConvergence: return "convergence";
    case ErrorKind::kConditioning: return "conditioning";
    case ErrorKind::kDegeneracy: return "degeneracy";
    case ErrorKind::kNotPsd: return "not-psd";
    case ErrorKind::kWellPosedness: return "well-posedness";
    case ErrorKind::kCoercivity: return "coercivity";
    case ErrorKind::kSupport: return "support";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

bool Error::is_numerical() const noexcept {
  switch (kind_) {
    case ErrorKind::kDomain:
    case ErrorKind::kValidation:
    case ErrorKind::kIo:
      return false;
    default:
      return true;
  }
}

}  // namespace romcex
