#pragma once

#include <stdexcept>
#include <string>

namespace finpilot {

// Base of every error raised by the library. `kind()` is a stable,
// machine-parsable tag used by the CLI's one-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message);
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FINPILOT_DEFINE_ERROR(Name, tag)                              \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  }

FINPILOT_DEFINE_ERROR(ParseError, "parse");
FINPILOT_DEFINE_ERROR(AlignmentError, "alignment");
FINPILOT_DEFINE_ERROR(ValidationError, "validation");
FINPILOT_DEFINE_ERROR(BoundsError, "bounds");
FINPILOT_DEFINE_ERROR(DegenerateError, "degenerate");
FINPILOT_DEFINE_ERROR(InvalidActionError, "invalid-action");
FINPILOT_DEFINE_ERROR(MarketDataError, "market-data");
FINPILOT_DEFINE_ERROR(NumericError, "numeric");
FINPILOT_DEFINE_ERROR(LifecycleError, "lifecycle");
FINPILOT_DEFINE_ERROR(ShapeError, "shape");
FINPILOT_DEFINE_ERROR(TrainingError, "training");
FINPILOT_DEFINE_ERROR(ConditioningError, "conditioning");
FINPILOT_DEFINE_ERROR(CoverageError, "coverage");
FINPILOT_DEFINE_ERROR(InfeasibleTargetError, "infeasible-target");
FINPILOT_DEFINE_ERROR(ConfigError, "config");
FINPILOT_DEFINE_ERROR(IoError, "io");

#undef FINPILOT_DEFINE_ERROR

}  // namespace finpilot
