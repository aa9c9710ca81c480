#pragma once

#include <stdexcept>
#include <string>

namespace efc {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scenario file could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Scenario or grid data violates an invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A linear system that is expected to be nonsingular was not
/// (empty fixed set, missing generator bus, invalid grid).
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

/// Integration produced a non-finite state.
class IntegrationDivergedError : public Error {
 public:
  using Error::Error;
};

/// The optimization problem admits no feasible point.
class InfeasibleProblemError : public Error {
 public:
  using Error::Error;
};

}  // namespace efc
