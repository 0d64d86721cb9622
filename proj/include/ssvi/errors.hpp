#pragma once

#include <stdexcept>
#include <string>

namespace ssvi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape/dimension disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Covariance or precision too ill-conditioned to invert.
class DegenerateCovariance : public Error {
 public:
  using Error::Error;
};

/// A backtracked parameter step could not restore feasibility.
class StepRejected : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Outcome value outside the likelihood's support.
class InvalidOutcome : public Error {
 public:
  using Error::Error;
};

}  // namespace ssvi
