#pragma once

#include <stdexcept>
#include <string>

namespace dpsr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated preconditions: wrong extents, uninitialized state, bad arguments.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed container files (cubes, checkpoints).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key = {}, int line = 0)
      : Error(what), key_(std::move(key)), line_(line) {}
  const std::string& key() const { return key_; }
  int line() const { return line_; }

 private:
  std::string key_;
  int line_;
};

}  // namespace dpsr
