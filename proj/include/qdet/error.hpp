#pragma once

#include <stdexcept>
#include <string>

namespace qdet {

/// Argument outside the mathematical domain of an operation (negative time,
/// non-positive rate, unsorted arrivals, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Matrix/vector shapes that do not fit together. Kept apart from
/// DomainError so callers can tell malformed input from invalid values.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a documented precondition on a function argument
/// (e.g. a value function leaving [0,1]).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite or otherwise unusable numerical result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration or serialized artifact.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qdet
