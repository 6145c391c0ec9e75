#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace icrl {

// Raised when an operation's preconditions do not hold (shape mismatch,
// label out of range, K mismatch between model and episode, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed configuration or command-line input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary file decoding failure; carries the byte offset where it happened.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace icrl
