#pragma once

// Dense nonnegative vectors and matrices. Both types validate on
// construction and are immutable afterwards.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <vector>

namespace eot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Nonnegative vector with its cached total mass. Plays the role of a
/// marginal (prior over data or hypotheses).
class MarginalVector {
 public:
  MarginalVector() = default;
  explicit MarginalVector(Vector values);
  MarginalVector(std::initializer_list<double> values);
  explicit MarginalVector(const std::vector<double>& values);

  /// n copies of `mass / n`.
  static MarginalVector uniform(Index n, double mass = 1.0);

  Index size() const { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }
  const Vector& values() const { return values_; }
  double mass() const { return mass_; }

  bool strictly_positive() const;
  /// Throws PreconditionError if any entry is zero.
  void require_positive(const char* what) const;

  /// Copy rescaled to the given total mass.
  MarginalVector with_mass(double mass) const;

 private:
  Vector values_;
  double mass_ = 0.0;
};

/// Dense |D| x |H| matrix with nonnegative finite entries. The pattern is
/// the strictly positive support.
///
/// Zero rows and columns are representable (argmax plans produce them);
/// operations that scale a matrix reject them with StructuralError.
class NonnegMatrix {
 public:
  NonnegMatrix() = default;
  explicit NonnegMatrix(Matrix entries);
  NonnegMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static NonnegMatrix identity(Index n);
  static NonnegMatrix constant(Index rows, Index cols, double value);
  /// Outer product r c^T / mass, the independent coupling.
  static NonnegMatrix independent(const MarginalVector& r,
                                  const MarginalVector& c);

  Index rows() const { return entries_.rows(); }
  Index cols() const { return entries_.cols(); }
  double operator()(Index i, Index j) const { return entries_(i, j); }
  const Matrix& entries() const { return entries_; }

  bool in_pattern(Index i, Index j) const { return entries_(i, j) > 0.0; }
  Index support_size() const;
  bool full_support() const { return support_size() == rows() * cols(); }
  /// True when every positive entry of *this is positive in `other`.
  bool pattern_within(const NonnegMatrix& other) const;

  double mass() const { return entries_.sum(); }
  Vector row_sums() const { return entries_.rowwise().sum(); }
  Vector col_sums() const { return entries_.colwise().sum().transpose(); }
  double max_entry() const { return entries_.maxCoeff(); }

  std::optional<Index> first_zero_row() const;
  std::optional<Index> first_zero_col() const;
  /// Throws StructuralError naming the first all-zero row, then column.
  void require_no_empty_lines() const;

  NonnegMatrix transpose() const { return NonnegMatrix(Matrix(entries_.transpose())); }

 private:
  Matrix entries_;
};

/// Throws PreconditionError unless the two masses agree within `rel_tol`
/// relative to the larger one.
void require_equal_mass(const MarginalVector& r, const MarginalVector& c,
                        double rel_tol = 1e-9);

}  // namespace eot
