#ifndef DAOVFL_ERRORS_HPP_
#define DAOVFL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace daovfl {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed; the run cannot continue.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation not permitted in the object's current state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Missing or malformed protocol message (e.g. an absent embedding block).
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Precondition of an operation violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Value outside its permitted domain (e.g. a class label >= C).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Sensor with zero transmission rate.
class UnreachableSensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace daovfl

#endif  // DAOVFL_ERRORS_HPP_
