#pragma once

#include <stdexcept>
#include <string>

namespace lungsc {

// Base class for all library errors. exit_code() maps an error onto the
// CLI process exit code (2 config, 3 data, 4 training divergence).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual int exit_code() const { return 3; }
};

namespace detail {
inline std::string prefixed(const char* name, const std::string& msg) {
  return std::string(name) + ": " + msg;
}
}  // namespace detail

#define LUNGSC_DEFINE_ERROR(NAME, CODE)                              \
  class NAME : public Error {                                        \
   public:                                                           \
    explicit NAME(const std::string& m)                              \
        : Error(detail::prefixed(#NAME, m)) {}                       \
    int exit_code() const override { return CODE; }                  \
  }

LUNGSC_DEFINE_ERROR(ConfigError, 2);

// ingest
LUNGSC_DEFINE_ERROR(MalformedName, 3);
LUNGSC_DEFINE_ERROR(MalformedAnnotation, 3);
LUNGSC_DEFINE_ERROR(UnsupportedTask, 2);
LUNGSC_DEFINE_ERROR(UnknownDiagnosis, 3);
LUNGSC_DEFINE_ERROR(SplitFileMissing, 3);
LUNGSC_DEFINE_ERROR(InsufficientPatients, 3);

// features
LUNGSC_DEFINE_ERROR(EmptyInput, 3);
LUNGSC_DEFINE_ERROR(SegmentTooShort, 3);
LUNGSC_DEFINE_ERROR(InvalidWarp, 2);
LUNGSC_DEFINE_ERROR(ShapeMismatch, 3);

// speccorr
LUNGSC_DEFINE_ERROR(EmptyStack, 3);
LUNGSC_DEFINE_ERROR(EmptyDevice, 3);
LUNGSC_DEFINE_ERROR(MissingDeviceProfile, 3);

// augment
LUNGSC_DEFINE_ERROR(InvalidFactor, 2);

// stochnorm / backbone
LUNGSC_DEFINE_ERROR(BatchTooSmall, 3);
LUNGSC_DEFINE_ERROR(WeightShapeMismatch, 3);
LUNGSC_DEFINE_ERROR(MissingWeights, 3);
LUNGSC_DEFINE_ERROR(HeadDimMismatch, 3);

// cotuning
LUNGSC_DEFINE_ERROR(EmptyValidation, 3);
LUNGSC_DEFINE_ERROR(DegenerateValidation, 3);
LUNGSC_DEFINE_ERROR(MissingClassSamples, 3);
LUNGSC_DEFINE_ERROR(SingularFit, 3);
LUNGSC_DEFINE_ERROR(DivergenceDetected, 4);

// eval
LUNGSC_DEFINE_ERROR(EmptyPredictions, 3);
LUNGSC_DEFINE_ERROR(LengthMismatch, 3);
LUNGSC_DEFINE_ERROR(CheckpointMismatch, 3);

// io
LUNGSC_DEFINE_ERROR(IoError, 3);

#undef LUNGSC_DEFINE_ERROR

}  // namespace lungsc
