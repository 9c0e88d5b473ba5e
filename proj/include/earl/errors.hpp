#pragma once

#include <stdexcept>
#include <string>

namespace earl {

// Base of every error the library raises. Subclasses map onto CLI exit codes:
// ConfigError -> 2, ParseError/ShapeError/DomainError -> 3, NumericalError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace earl
