#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sfnet {

// Base of every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Errors caused by bad input (files, configs, flags). The CLI maps these to
// exit code 1; everything else is treated as internal (exit code 2).
struct UserError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : UserError {
  using UserError::UserError;
};

struct ParseError : UserError {
  ParseError(const std::string& what, std::size_t offset)
      : UserError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace sfnet
