#ifndef SIAG_ERROR_HPP
#define SIAG_ERROR_HPP

#include <stdexcept>
#include <string>

namespace siag {

/// Invalid configuration or precondition on caller-supplied parameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Violated call contract (wrong dimension, out-of-order iteration, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Iterate left the finite region or exceeded the divergence guard.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long iteration, long trial = -1)
      : std::runtime_error(what), iteration_(iteration), trial_(trial) {}

  long iteration() const noexcept { return iteration_; }
  long trial() const noexcept { return trial_; }

 private:
  long iteration_;
  long trial_;
};

/// File system or serialization failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace siag

#endif  // SIAG_ERROR_HPP
