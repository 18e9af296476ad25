#pragma once

#include <stdexcept>
#include <string>

namespace faciesnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameter, option or config file content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Structurally malformed input file (missing column, bad magic, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A cell that could not be read as a number.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Data does not match the model it is fed to (channels, window width).
class MismatchError : public Error {
 public:
  using Error::Error;
};

// Operation requires facies labels that the data does not carry.
class MissingLabelsError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace faciesnet
