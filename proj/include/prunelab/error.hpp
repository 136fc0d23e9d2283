#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prunelab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the domain an operation accepts.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A binary file (checkpoint or dataset) could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration failed validation. `path()` names the field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int cycle, const std::string& what)
      : Error("cycle " + std::to_string(cycle) + ": " + what), cycle_(cycle) {}
  int cycle() const noexcept { return cycle_; }

 private:
  int cycle_;
};

}  // namespace prunelab
