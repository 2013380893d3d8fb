#ifndef BFSTAR_ERRORS_HPP
#define BFSTAR_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfstar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class DomainError : public Error {
public:
  using Error::Error;
};

/// A right-hand side or Jacobian evaluation produced a non-finite value.
class EvaluationError : public Error {
public:
  EvaluationError(std::size_t component, double position)
      : Error("non-finite value in component " + std::to_string(component) +
              " at x = " + std::to_string(position)),
        component_(component), position_(position) {}

  std::size_t component() const noexcept { return component_; }
  double position() const noexcept { return position_; }

private:
  std::size_t component_;
  double position_;
};

/// The banded collocation matrix could not be factorized.
class FactorizationError : public Error {
public:
  explicit FactorizationError(std::size_t pivot)
      : Error("singular collocation matrix (zero pivot at row " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

private:
  std::size_t pivot_;
};

/// The interface matching system is numerically singular.
class SingularMatchingError : public Error {
public:
  explicit SingularMatchingError(double rcond)
      : Error("singular matching system (reciprocal condition " + std::to_string(rcond) + ")"),
        rcond_(rcond) {}

  double rcond() const noexcept { return rcond_; }

private:
  double rcond_;
};

/// An iterative solve ran out of iterations. Carries the residual history.
class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}

  const std::vector<double>& history() const noexcept { return history_; }

private:
  std::vector<double> history_;
};

/// A file could not be written.
class IoError : public Error {
public:
  using Error::Error;
};

/// Malformed configuration file or flag.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace bfstar

#endif
