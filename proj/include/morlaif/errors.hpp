#ifndef MORLAIF_ERRORS_HPP_
#define MORLAIF_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace morlaif {

// Bad input, configuration or protocol order. Maps to CLI exit status 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical or I/O failure while running. Maps to CLI exit status 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace morlaif

#endif  // MORLAIF_ERRORS_HPP_
