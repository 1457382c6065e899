#pragma once

#include <stdexcept>
#include <string>

namespace midnet {

// Base of all library errors. Errors raised while validating user input
// (bad arguments, malformed files, inconsistent configs) derive from
// ValidationError so the CLI can map them to exit code 1; everything else
// maps to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
  using Error::Error;
};

#define MIDNET_DEFINE_ERROR(NAME, BASE)                      \
  struct NAME : BASE {                                       \
    explicit NAME(const std::string& msg)                    \
        : BASE(std::string(#NAME) + ": " + msg) {}           \
  }

// geometry
MIDNET_DEFINE_ERROR(EmptyCloud, ValidationError);
MIDNET_DEFINE_ERROR(TooFewPoints, ValidationError);

// octree
MIDNET_DEFINE_ERROR(PointOutOfBounds, ValidationError);
MIDNET_DEFINE_ERROR(InvalidIndex, Error);

// autodiff
MIDNET_DEFINE_ERROR(ShapeMismatch, Error);
MIDNET_DEFINE_ERROR(NonScalarLoss, Error);
MIDNET_DEFINE_ERROR(ZeroVector, Error);

// network / training
MIDNET_DEFINE_ERROR(InvalidConfig, ValidationError);
MIDNET_DEFINE_ERROR(DepthMismatch, Error);
MIDNET_DEFINE_ERROR(ConfigMismatch, ValidationError);
MIDNET_DEFINE_ERROR(TrainingDiverged, Error);

// losses
MIDNET_DEFINE_ERROR(IndexOutOfRange, Error);
MIDNET_DEFINE_ERROR(LabelMismatch, Error);

// downstream metrics
MIDNET_DEFINE_ERROR(EmptyInput, ValidationError);
MIDNET_DEFINE_ERROR(LabelRange, ValidationError);

// registration
MIDNET_DEFINE_ERROR(DegenerateGeometry, Error);
MIDNET_DEFINE_ERROR(TooFewCorrespondences, Error);

// datagen / io
MIDNET_DEFINE_ERROR(InvalidSpec, ValidationError);
MIDNET_DEFINE_ERROR(IoError, Error);
MIDNET_DEFINE_ERROR(ParseError, ValidationError);

#undef MIDNET_DEFINE_ERROR

}  // namespace midnet
