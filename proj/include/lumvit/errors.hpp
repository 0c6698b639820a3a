#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lumvit {

// Validation failure of a documented precondition (bad config value,
// inconsistent label map, row sums off, ...). CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / extent mismatch between operands.
class DimensionError : public ValidationError {
 public:
  explicit DimensionError(const std::string& msg) : ValidationError(msg) {}
};

// Malformed container file. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::uint64_t byte_offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::uint64_t offset;
};

// Non-finite value where the pipeline requires finite numbers (NaN loss,
// NaN gradient). CLI maps this to exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Least-squares breakdown inside OMP. The support selected before the
// breakdown is preserved so callers can inspect partial progress.
class DegenerateError : public std::runtime_error {
 public:
  DegenerateError(const std::string& msg, std::vector<int> partial_support)
      : std::runtime_error(msg), support(std::move(partial_support)) {}
  std::vector<int> support;
};

}  // namespace lumvit
