#pragma once

#include <stdexcept>
#include <string>

namespace meshforge {

// Root of every error thrown by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument value or shape mismatch.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Mesh connectivity that violates the closed 2-manifold contract.
class TopologyError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Carries the offending line (1-based, 0 if unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A precondition on numeric content (e.g. unit-norm vectors) was not met.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// The remote scorer answered, but the answer does not follow the protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// The remote scorer could not be reached. Safe to retry.
class TransportError : public Error {
 public:
  using Error::Error;
  bool retriable() const noexcept { return true; }
};

}  // namespace meshforge
