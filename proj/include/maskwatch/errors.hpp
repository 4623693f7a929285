#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maskwatch {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller handed us something that violates an operation's precondition.
struct InvalidInput : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct NotFoundError : Error {
  using Error::Error;
};

/// File exists but is not in the expected container format.
struct FormatError : Error {
  using Error::Error;
};

/// Text input that failed to parse; carries the 1-based line number.
struct ParseError : Error {
  ParseError(const std::string& message, std::size_t line, const std::string& source = {})
      : Error((source.empty() ? std::string() : source + ": ") + "line " + std::to_string(line) + ": " + message),
        message_(message),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t line_;
};

/// Failure inside a detector/classifier backend, tagged with the backend name.
struct BackendError : Error {
  BackendError(const std::string& backend, const std::string& what)
      : Error("backend '" + backend + "': " + what), backend_(backend) {}
  const std::string& backend() const noexcept { return backend_; }

 private:
  std::string backend_;
};

struct TrainingError : Error {
  using Error::Error;
};

}  // namespace maskwatch
