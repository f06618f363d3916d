#include "kefam/error.hpp"

namespace kefam {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::StencilOutOfDomain: return "StencilOutOfDomain";
    case ErrorKind::OrderUnsupported: return "OrderUnsupported";
    case ErrorKind::UnknownFamily: return "UnknownFamily";
    case ErrorKind::InvariantViolated: return "InvariantViolated";
    case ErrorKind::NotOnBoundary: return "NotOnBoundary";
    case ErrorKind::NonpositiveJ: return "NonpositiveJ";
    case ErrorKind::LevelOutOfRange: return "LevelOutOfRange";
    case ErrorKind::DegenerateRay: return "DegenerateRay";
    case ErrorKind::BlendFailed: return "BlendFailed";
    case ErrorKind::EmptyInterior: return "EmptyInterior";
    case ErrorKind::PositivityLost: return "PositivityLost";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::SingularMetric: return "SingularMetric";
    case ErrorKind::LinearSolveFailed: return "LinearSolveFailed";
    case ErrorKind::SingularSliceBlock: return "SingularSliceBlock";
    case ErrorKind::SliceSolveFailed: return "SliceSolveFailed";
    case ErrorKind::StencilInconsistent: return "StencilInconsistent";
    case ErrorKind::NotStronglyPseudoconvexPoint: return "NotStronglyPseudoconvexPoint";
    case ErrorKind::LeftDomain: return "LeftDomain";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace kefam
