#pragma once

#include <stdexcept>
#include <string>

namespace repflow {

// Thrown on tensor shape mismatches; message names the primitive and both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated operation precondition or contract (bad argument, out-of-range value).
class PreconditionError : public std::runtime_error {
 public:
  explicit PreconditionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical instability: NaN/Inf where finite values are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file (CSV/JSON parse or schema failure).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure; message carries the path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace repflow
