#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace axmlp {

/// Shape or extent mismatch between tensors, volumes or configs.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid argument value (rates, ranges, empty sets, impossible splits).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. calling backward on a non-scalar tensor.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A quantity is mathematically undefined for the given input.
class UndefinedValueError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// NaN/Inf encountered in loss, gradients or parameters.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content. `offset` is the byte position
/// where the problem was detected.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Data leakage between the test split and training folds.
class LeakageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace axmlp
