#pragma once

#include <stdexcept>
#include <string>

namespace dfml {

// Invalid or inconsistent configuration (bad scenario, indivisible sizes, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Malformed call arguments (shape mismatch, label out of range, ...).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

// Operation requires a capability the pool was not built with.
class PermissionError : public std::runtime_error {
 public:
  explicit PermissionError(const std::string& msg) : std::runtime_error("permission error: " + msg) {}
};

// Episode or task sampling could not be satisfied; message names the deficit.
class SamplingError : public std::runtime_error {
 public:
  explicit SamplingError(const std::string& msg) : std::runtime_error("sampling error: " + msg) {}
};

// Zero-order estimation hit a non-finite loss value.
class EstimationError : public std::runtime_error {
 public:
  EstimationError(const std::string& msg, int direction_index)
      : std::runtime_error("estimation error: " + msg), direction_index(direction_index) {}
  int direction_index;  // offending direction, -1 for the base evaluation
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace dfml
