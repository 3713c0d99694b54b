#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ieq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NonCommensurateSteps : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NoSplit : public Error {
 public:
  using Error::Error;
};

// The model violates V(q) + eps >= 0.
class NegativePotential : public Error {
 public:
  using Error::Error;
};

// V(q) + eps vanishes while the gradient does not; the caller needs eps > 0.
class DegeneratePotential : public Error {
 public:
  using Error::Error;
};

class SingularUpdate : public Error {
 public:
  using Error::Error;
};

/// Base for failures of a numerical solver (exit code 4 in the CLI).
class SolverFailure : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public SolverFailure {
 public:
  using SolverFailure::SolverFailure;
};

class NoConvergence : public SolverFailure {
 public:
  using SolverFailure::SolverFailure;
};

class NewtonNoConvergence : public SolverFailure {
 public:
  using SolverFailure::SolverFailure;
};

class LinearSolveFailure : public SolverFailure {
 public:
  using SolverFailure::SolverFailure;
};

class Diverged : public Error {
 public:
  Diverged(const std::string& what, std::int64_t step = -1)
      : Error(what), step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace ieq
