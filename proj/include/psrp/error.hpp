#pragma once

#include <stdexcept>
#include <string>

namespace psrp {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (dataset rows, config documents, prediction files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a domain constraint.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Division by a non-positive normalizer, non-finite values, and the like.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A protein that cannot be segmented with the requested configuration.
class AugmentError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// A ranking metric requested on labels that leave it undefined.
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace psrp
