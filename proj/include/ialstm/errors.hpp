#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ialstm {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnitsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data problems: malformed annotation lines, bad strides, manifests.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line) : DataError(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class StrideError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace ialstm
