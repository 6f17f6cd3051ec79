#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dse {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Input that parses but violates the index-set / CD-map structure.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class UnsupportedConventionError : public StructuralError {
 public:
  using StructuralError::StructuralError;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Everything below signals a failure of the numerics rather than of the input format.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DivisionHazardError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class PositivityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& msg, double grad_norm)
      : NumericalError(msg), grad_norm_(grad_norm) {}
  double grad_norm() const noexcept { return grad_norm_; }

 private:
  double grad_norm_;
};

class SeparationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class OverflowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A broken internal invariant; never caused by valid user input.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dse
