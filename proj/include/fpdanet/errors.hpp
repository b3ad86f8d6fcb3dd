#pragma once

#include <stdexcept>
#include <string>

namespace fpdanet {

// Invalid architecture or run configuration (bad widths, depths, ratios...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller-supplied data violates a precondition (input size, label range, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feature maps that should line up do not.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint or manifest could not be read back.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged or otherwise could not continue.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fpdanet
