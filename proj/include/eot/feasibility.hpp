#pragma once

// Exact-scalability diagnostics for a support pattern, via bipartite
// max-flow (rows supply r, columns demand c, pattern entries are
// uncapacitated arcs).

#include <vector>

#include "eot/matrix.hpp"

namespace eot {

/// Boolean support set over a rows x cols grid.
class SupportPattern {
 public:
  SupportPattern() = default;
  SupportPattern(Index rows, Index cols) : rows_(rows), cols_(cols), cells_(rows * cols, 0) {}
  static SupportPattern of(const NonnegMatrix& m);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  bool operator()(Index i, Index j) const { return cells_[i * cols_ + j] != 0; }
  void set(Index i, Index j, bool on = true) { cells_[i * cols_ + j] = on ? 1 : 0; }
  Index count() const;
  bool operator==(const SupportPattern&) const = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<char> cells_;
};

struct FeasibilityResult {
  bool feasible = false;
  /// When infeasible: rows whose pattern neighbours all lie in
  /// `witness_cols`, yet whose supply exceeds those columns' demand
  /// (sum r[witness_rows] > sum c[witness_cols]). Empty when feasible.
  std::vector<Index> witness_rows;
  std::vector<Index> witness_cols;
  double max_flow = 0.0;
  /// Unroutable mass: sum(r) - max_flow.
  double deficit = 0.0;
};

/// Does a nonnegative matrix with this support and row/column sums (r, c)
/// exist? Masses of r and c must agree (otherwise trivially infeasible, with
/// all rows and columns as the witness).
FeasibilityResult feasibility_check(const SupportPattern& pattern,
                                    const MarginalVector& r,
                                    const MarginalVector& c);

/// The entries of `pattern` that are positive in at least one matrix of
/// U(r, c) with that support. This is the support of the (r, c)-Sinkhorn
/// limit; entries outside it decay to zero only sublinearly under plain
/// scaling. Returns an empty pattern (0 x 0) when infeasible.
SupportPattern scalable_support(const SupportPattern& pattern,
                                const MarginalVector& r,
                                const MarginalVector& c);

}  // namespace eot
