#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridfed {

// Caller broke a documented precondition (dimension mismatch, stepping a finished episode, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A quantity that must be finite was not. TRPO aborts the update and restores parameters.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed wire or checkpoint bytes. `offset()` is the byte position where decoding failed.
class FramingError : public std::runtime_error {
 public:
  FramingError(std::size_t offset, const std::string& what)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void require(bool condition, const char* message) {
  if (!condition) [[unlikely]] {
    throw ContractViolation(message);
  }
}

inline void require(bool condition, const std::string& message) {
  if (!condition) [[unlikely]] {
    throw ContractViolation(message);
  }
}

}  // namespace gridfed
