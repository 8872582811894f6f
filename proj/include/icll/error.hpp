#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace icll {

// Shapes that do not line up for an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward on a non-scalar loss.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Prompt longer than the model's positional table.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Malformed distribution spec strings or configuration values.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// r_eps with |eps_star - eps_zero| == 0.
class UndefinedRateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint decoding failure; carries the byte offset where decoding stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace icll
