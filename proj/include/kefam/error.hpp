#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kefam {

enum class ErrorKind {
  StencilOutOfDomain,
  OrderUnsupported,
  UnknownFamily,
  InvariantViolated,
  NotOnBoundary,
  NonpositiveJ,
  LevelOutOfRange,
  DegenerateRay,
  BlendFailed,
  EmptyInterior,
  PositivityLost,
  NoConvergence,
  SingularMetric,
  LinearSolveFailed,
  SingularSliceBlock,
  SliceSolveFailed,
  StencilInconsistent,
  NotStronglyPseudoconvexPoint,
  LeftDomain,
  ConfigInvalid,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI)
// can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace kefam
