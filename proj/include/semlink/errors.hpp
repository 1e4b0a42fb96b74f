#pragma once

#include <stdexcept>
#include <string>

namespace semlink {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside the documented domain.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation invoked in the wrong lifecycle state (backward before forward,
// encode with an unpretrained bundle, ...).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A protocol participant is missing data it was promised.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, double achieved)
      : std::runtime_error(what), achieved_accuracy(achieved) {}
  double achieved_accuracy;
};

}  // namespace semlink
