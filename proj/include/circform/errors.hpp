#pragma once

#include <stdexcept>
#include <string>

namespace circform {

// Root of every error the library throws. Callers that only care about
// "something in circform failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CIRCFORM_DEFINE_ERROR(Name)           \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

CIRCFORM_DEFINE_ERROR(InvalidArgument);
CIRCFORM_DEFINE_ERROR(DegenerateProjection);
CIRCFORM_DEFINE_ERROR(NotOnCircle);
CIRCFORM_DEFINE_ERROR(CoincidentPoints);
CIRCFORM_DEFINE_ERROR(IntegrationDiverged);
CIRCFORM_DEFINE_ERROR(InvalidAction);
CIRCFORM_DEFINE_ERROR(EpisodeFinished);
CIRCFORM_DEFINE_ERROR(NonFiniteInput);
CIRCFORM_DEFINE_ERROR(StaleCache);
CIRCFORM_DEFINE_ERROR(ShapeMismatch);
CIRCFORM_DEFINE_ERROR(CorruptCheckpoint);
CIRCFORM_DEFINE_ERROR(VersionMismatch);
CIRCFORM_DEFINE_ERROR(EmptyBatch);
CIRCFORM_DEFINE_ERROR(EmptyTrajectory);
CIRCFORM_DEFINE_ERROR(IncompatibleCheckpoint);
CIRCFORM_DEFINE_ERROR(IoFailure);
CIRCFORM_DEFINE_ERROR(ConfigError);

#undef CIRCFORM_DEFINE_ERROR

}  // namespace circform
