#pragma once

#include <stdexcept>
#include <string>

namespace covnz {

// Base class for every error raised by the toolkit. The CLI maps any
// Error to a nonzero exit code; the concrete type names the condition.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define COVNZ_DEFINE_ERROR(Name)                                               \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
  }

COVNZ_DEFINE_ERROR(InvalidMatrix);
COVNZ_DEFINE_ERROR(InvalidDimension);
COVNZ_DEFINE_ERROR(InsufficientData);
COVNZ_DEFINE_ERROR(FormatError);
COVNZ_DEFINE_ERROR(TruncatedFile);
COVNZ_DEFINE_ERROR(ChecksumError);
COVNZ_DEFINE_ERROR(NetworkError);
COVNZ_DEFINE_ERROR(InsufficientClassData);
COVNZ_DEFINE_ERROR(BatchShapeError);
COVNZ_DEFINE_ERROR(PairingError);
COVNZ_DEFINE_ERROR(NumericalOverflow);
COVNZ_DEFINE_ERROR(DegenerateActivity);
COVNZ_DEFINE_ERROR(DivergenceError);
COVNZ_DEFINE_ERROR(CorruptCheckpoint);
COVNZ_DEFINE_ERROR(InsufficientPairs);
COVNZ_DEFINE_ERROR(EmptyHessian);
COVNZ_DEFINE_ERROR(ShapeError);
COVNZ_DEFINE_ERROR(DegenerateCovariance);
COVNZ_DEFINE_ERROR(InvalidSpikes);
COVNZ_DEFINE_ERROR(DegenerateInput);
COVNZ_DEFINE_ERROR(InvalidDistribution);
COVNZ_DEFINE_ERROR(EmptyStiffSet);
COVNZ_DEFINE_ERROR(ConfigError);

#undef COVNZ_DEFINE_ERROR

}  // namespace covnz
