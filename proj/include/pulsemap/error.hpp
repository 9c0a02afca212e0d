#pragma once

#include <stdexcept>
#include <string>

namespace pulsemap {

enum class ErrorKind { Parse, Data, Config, Numerics };

/// Base class for every error the library raises. `kind()` is what the CLI
/// reports on standard error and what decides the exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const char* kind_name() const noexcept;

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::Parse, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

/// Raised when a loss or gradient goes non-finite. `tensor()` names the
/// offending parameter (or loss term) so training logs can point at it.
class NumericsError : public Error {
 public:
  NumericsError(const std::string& tensor, const std::string& what)
      : Error(ErrorKind::Numerics, what), tensor_(tensor) {}

  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

inline const char* Error::kind_name() const noexcept {
  switch (kind_) {
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Data: return "DataError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Numerics: return "NumericsError";
  }
  return "Error";
}

}  // namespace pulsemap
