#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace segmil {

/// Base for every error the engine raises. The CLI maps subclasses onto
/// exit codes (schema 2, io 3, config 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a data invariant (shape, range, finiteness, coverage).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A line of a JSONL file could not be parsed.
class ParseError : public SchemaError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : SchemaError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Unsupported format_version or file kind.
class FormatError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

/// An evaluation protocol is incomplete (e.g. a missing severity cell).
class ProtocolError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in an intermediate tensor during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace segmil
