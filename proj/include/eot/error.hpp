#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eot {

/// Violated precondition on an argument (dimension mismatch, mass mismatch,
/// negative entry, ...). The CLI maps this to exit code 2.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A row or column that must carry mass is identically zero.
class StructuralError : public PreconditionError {
 public:
  enum class Axis { kRow, kColumn };

  StructuralError(Axis axis, std::size_t index)
      : PreconditionError(std::string(axis == Axis::kRow ? "row " : "column ") +
                          std::to_string(index) + " is all zero"),
        axis_(axis),
        index_(index) {}

  Axis axis() const { return axis_; }
  std::size_t index() const { return index_; }

 private:
  Axis axis_;
  std::size_t index_;
};

/// Arguments have the wrong kind (e.g. a joint plan passed where a
/// conditional one is required) or an undefined quantity was requested.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The dual Hessian at a Sinkhorn limit could not be factorized.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eot
