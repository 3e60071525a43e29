#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace embkit {

enum class ErrorKind {
  parse,
  validation,
  config,
  io,
  dimension_mismatch,
  degenerate_row,
  degenerate_batch,
  not_an_owner,
  divergence,
  backend,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the whole toolkit; the kind drives the CLI's
// machine-readable error report and exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(ErrorKind::parse,
              source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace embkit
