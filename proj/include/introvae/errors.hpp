#pragma once

#include <stdexcept>
#include <string>

namespace introvae {

// Tensor or vector dimensions disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numeric input violates a precondition (non-finite, asymmetric, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad configuration value or unknown key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation called in the wrong training phase.
class PhaseError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Checkpoint or feature file could not be read.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss or an I/O failure.
class TrainingAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace introvae
