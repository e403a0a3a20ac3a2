#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfflow {

/// Raised when an operation receives arguments outside its contract.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity appeared while stepping a flow.
class NumericalBlowup : public std::runtime_error {
 public:
  NumericalBlowup(const std::string& what, std::size_t iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

class DegenerateParticle : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GroupTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IllPosed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UndefinedDistance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfflow
