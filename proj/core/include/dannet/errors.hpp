#pragma once

#include <stdexcept>
#include <string>

namespace dannet {

/// Shape or index disagreement between tensors/operands.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration (bad hyperparameters, malformed config file,
/// missing paths). CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad input data (too-short signal, silent waveform, broken file).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss. Carries the step diagnostics.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int step, double loss_y, double loss_z)
      : std::runtime_error(what), step(step), loss_y(loss_y), loss_z(loss_z) {}
  int step;
  double loss_y;
  double loss_z;
};

}  // namespace dannet
