#pragma once

#include <stdexcept>
#include <string>

namespace fokker {

/// Base class for every failure raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on physical parameters or grid data was violated.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Coupling operator is singular, indefinite or too ill-conditioned to invert.
class SingularOperator : public Error {
 public:
  using Error::Error;
};

/// An iterative solve (constraint fixed point, shooting) did not converge.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace fokker
