#include "eot/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eot/error.hpp"

namespace eot {

namespace {

void check_entries(const double* data, Index count, const char* what) {
  for (Index k = 0; k < count; ++k) {
    const double x = data[k];
    if (!std::isfinite(x) || x < 0.0) {
      throw PreconditionError(std::string(what) + ": entry " +
                              std::to_string(k) + " is negative or not finite");
    }
  }
}

}  // namespace

MarginalVector::MarginalVector(Vector values) : values_(std::move(values)) {
  check_entries(values_.data(), values_.size(), "marginal");
  mass_ = values_.sum();
}

MarginalVector::MarginalVector(std::initializer_list<double> values)
    : MarginalVector(std::vector<double>(values)) {}

MarginalVector::MarginalVector(const std::vector<double>& values)
    : MarginalVector(Vector(Eigen::Map<const Vector>(
          values.data(), static_cast<Index>(values.size())))) {}

MarginalVector MarginalVector::uniform(Index n, double mass) {
  if (n <= 0) throw PreconditionError("uniform marginal needs n > 0");
  return MarginalVector(Vector::Constant(n, mass / static_cast<double>(n)));
}

bool MarginalVector::strictly_positive() const {
  return size() > 0 && (values_.array() > 0.0).all();
}

void MarginalVector::require_positive(const char* what) const {
  for (Index i = 0; i < size(); ++i) {
    if (!(values_[i] > 0.0)) {
      throw PreconditionError(std::string(what) + ": entry " + std::to_string(i) +
                              " must be strictly positive");
    }
  }
  if (size() == 0) throw PreconditionError(std::string(what) + ": empty");
}

MarginalVector MarginalVector::with_mass(double mass) const {
  if (!(mass_ > 0.0)) throw PreconditionError("cannot rescale a zero marginal");
  return MarginalVector(Vector(values_ * (mass / mass_)));
}

NonnegMatrix::NonnegMatrix(Matrix entries) : entries_(std::move(entries)) {
  check_entries(entries_.data(), entries_.size(), "matrix");
}

NonnegMatrix::NonnegMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  const auto n = static_cast<Index>(rows.size());
  const auto m = n == 0 ? Index{0} : static_cast<Index>(rows.begin()->size());
  Matrix e(n, m);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != m) {
      throw PreconditionError("ragged matrix literal");
    }
    Index j = 0;
    for (double x : row) e(i, j++) = x;
    ++i;
  }
  *this = NonnegMatrix(std::move(e));
}

NonnegMatrix NonnegMatrix::identity(Index n) {
  return NonnegMatrix(Matrix(Matrix::Identity(n, n)));
}

NonnegMatrix NonnegMatrix::constant(Index rows, Index cols, double value) {
  return NonnegMatrix(Matrix(Matrix::Constant(rows, cols, value)));
}

NonnegMatrix NonnegMatrix::independent(const MarginalVector& r,
                                       const MarginalVector& c) {
  require_equal_mass(r, c);
  return NonnegMatrix(Matrix(r.values() * c.values().transpose() / r.mass()));
}

Index NonnegMatrix::support_size() const {
  return (entries_.array() > 0.0).count();
}

bool NonnegMatrix::pattern_within(const NonnegMatrix& other) const {
  if (rows() != other.rows() || cols() != other.cols()) return false;
  return ((entries_.array() > 0.0) <= (other.entries_.array() > 0.0)).all();
}

std::optional<Index> NonnegMatrix::first_zero_row() const {
  for (Index i = 0; i < rows(); ++i) {
    if (!(entries_.row(i).array() > 0.0).any()) return i;
  }
  return std::nullopt;
}

std::optional<Index> NonnegMatrix::first_zero_col() const {
  for (Index j = 0; j < cols(); ++j) {
    if (!(entries_.col(j).array() > 0.0).any()) return j;
  }
  return std::nullopt;
}

void NonnegMatrix::require_no_empty_lines() const {
  if (rows() == 0 || cols() == 0) throw PreconditionError("matrix is empty");
  if (auto i = first_zero_row()) {
    throw StructuralError(StructuralError::Axis::kRow, static_cast<std::size_t>(*i));
  }
  if (auto j = first_zero_col()) {
    throw StructuralError(StructuralError::Axis::kColumn, static_cast<std::size_t>(*j));
  }
}

void require_equal_mass(const MarginalVector& r, const MarginalVector& c,
                        double rel_tol) {
  const double scale = std::max({std::abs(r.mass()), std::abs(c.mass()), 1e-300});
  if (std::abs(r.mass() - c.mass()) > rel_tol * scale) {
    throw PreconditionError("marginal masses differ: " + std::to_string(r.mass()) +
                            " vs " + std::to_string(c.mass()));
  }
}

}  // namespace eot
