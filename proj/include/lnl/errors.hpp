#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lnl {

// Shape or precondition mismatch detected at a call boundary.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Numeric domain violation (log of a non-positive value, division by zero,
// zero-norm reference matrix, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// API misuse that is not a shape problem, e.g. running backward twice.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lnl
