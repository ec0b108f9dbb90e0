#pragma once

#include <stdexcept>

namespace cfviz {

// Input/contract problems: bad shapes, malformed files, out-of-range flags.
// The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures of the computation itself: singular designs, divergent training,
// missed training gates. The CLI maps these to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularityError : public NumericError {
 public:
  using NumericError::NumericError;
};

class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace cfviz
