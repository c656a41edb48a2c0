#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dpprompt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Invalid or unresolvable configuration. The CLI maps this to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

// A value outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain"; }
};

// Not enough records to satisfy a sampling or partitioning request.
class InsufficientDataError : public Error {
 public:
  InsufficientDataError(const std::string& what, std::size_t required, std::size_t available)
      : Error(what + ": need " + std::to_string(required) + " records, have " +
              std::to_string(available) + " (short by " +
              std::to_string(required > available ? required - available : 0) + ")"),
        required_(required),
        available_(available) {}

  const char* kind() const noexcept override { return "insufficient_data"; }
  std::size_t required() const noexcept { return required_; }
  std::size_t available() const noexcept { return available_; }
  std::size_t shortfall() const noexcept { return required_ > available_ ? required_ - available_ : 0; }

 private:
  std::size_t required_;
  std::size_t available_;
};

class UnsupportedOperationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "unsupported"; }
};

// Network or authentication failure after the retry policy gave up.
class TransportError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "transport"; }
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  const char* kind() const noexcept override { return "parse"; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace dpprompt
