#pragma once

#include <stdexcept>
#include <string>

namespace phonodec {

// Bad input: shapes, vocabulary, configuration, file contents. CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values or other failures during computation. CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace phonodec
