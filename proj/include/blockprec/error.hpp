#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace blockprec {

// Error taxonomy. The CLI maps these onto exit codes:
//   InvalidArgument / TooLarge / Unsupported -> 2
//   NumericalError and subclasses           -> 3
//   IoError / ParseError                    -> 4

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an exhaustive computation would exceed its configured cap.
class TooLarge : public std::length_error {
 public:
  using std::length_error::length_error;
};

class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A principal block of a masked curvature matrix failed to factorize.
class SingularBlock : public NumericalError {
 public:
  explicit SingularBlock(std::size_t block, const std::string& hint = {})
      : NumericalError("block " + std::to_string(block) + " is not symmetric positive definite" +
                       (hint.empty() ? std::string() : "; " + hint)),
        block_(block) {}

  std::size_t block() const noexcept { return block_; }

 private:
  std::size_t block_;
};

class LineSearchFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace blockprec
