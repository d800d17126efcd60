#pragma once

// (r, c)-Sinkhorn scaling of a nonnegative kernel, in the linear domain or
// in a log-stabilized domain.
//
// For a matrix M and exponent lambda the limit has the form
//
//   P = diag(exp(lambda * alpha)) * M^[lambda] * diag(exp(lambda * beta))
//
// with the gauge beta[last] = 0.

#include <optional>

#include "eot/feasibility.hpp"
#include "eot/matrix.hpp"

namespace eot {

enum class Domain { kAuto, kLinear, kLog };

const char* to_string(Domain d);

struct SinkhornOptions {
  double tol = 1e-9;  ///< on the L1 residual of both marginals
  int max_iter = 10'000;
  Domain domain = Domain::kAuto;
  /// Zero out pattern entries that cannot carry mass in any matrix of
  /// U(r, c) before scaling, so that sparse exactly-scalable inputs reach
  /// their limit at a linear rate. Full-support inputs skip the check.
  bool restrict_support = true;
  /// Run the max-flow feasibility check and attach the result.
  bool check_feasibility = false;
  /// When plain scaling has not met `tol` after `newton_after` sweeps, try
  /// damped Newton steps on the dual potentials. Scaling slows down badly
  /// when the plan is close to a permutation (large lambda); the limit is
  /// the same either way. Falls back to plain sweeps if a step fails.
  bool accelerate = true;
  int newton_after = 100;
};

struct SinkhornResult {
  NonnegMatrix plan;
  Vector alpha;  ///< rows
  Vector beta;   ///< cols; beta[cols-1] == 0
  double lambda = 1.0;
  int iterations = 0;    ///< row+column sweeps
  int newton_steps = 0;  ///< accepted Newton steps (see SinkhornOptions::accelerate)
  double residual = 0.0;
  bool converged = false;
  Domain domain = Domain::kLinear;  ///< domain actually used
  Index pruned_entries = 0;         ///< pattern entries removed by restrict_support
  std::optional<FeasibilityResult> feasibility;
};

/// Entrywise M_ij^lambda with 0^lambda = 0.
NonnegMatrix elementwise_power(const NonnegMatrix& m, double lambda);

/// Scale each row i to sum r_i. Throws StructuralError on a zero row.
NonnegMatrix row_normalize(const NonnegMatrix& m, const MarginalVector& r);
/// Scale each column j to sum c_j. Throws StructuralError on a zero column.
NonnegMatrix col_normalize(const NonnegMatrix& m, const MarginalVector& c);
/// Rows (columns) rescaled to sum 1.
NonnegMatrix row_stochastic(const NonnegMatrix& m);
NonnegMatrix col_stochastic(const NonnegMatrix& m);

/// L1 distance of the row and column sums of `p` to (r, c).
double marginal_residual(const Matrix& p, const Vector& r, const Vector& c);

/// Sinkhorn limit of M^[lambda] with marginals (r, c).
///
/// Preconditions (PreconditionError): matching sizes, r and c strictly
/// positive, equal masses within 1e-9 relative, lambda > 0, M without an
/// all-zero row or column (StructuralError). Failing to reach `tol` within
/// `max_iter` is reported through `converged`, never thrown.
///
/// kAuto picks the log domain when lambda * max|log M_ij| > 500 and falls
/// back to it if the linear iteration leaves the floating-point range.
SinkhornResult sinkhorn(const NonnegMatrix& m, const MarginalVector& r,
                        const MarginalVector& c, double lambda = 1.0,
                        const SinkhornOptions& options = {});

/// Same, starting from a log-kernel (entries may be -infinity for pattern
/// zeros). The log domain is always used; `lambda` only converts the dual
/// scalings into potentials. `warm_row`/`warm_col` are optional initial log
/// scalings (lambda * alpha, lambda * beta).
SinkhornResult sinkhorn_log_kernel(const Matrix& log_kernel, const MarginalVector& r,
                                   const MarginalVector& c, double lambda,
                                   const SinkhornOptions& options = {},
                                   const Vector* warm_row = nullptr,
                                   const Vector* warm_col = nullptr);

/// Step-by-step scaling engine behind `sinkhorn`. Exposed so callers can
/// take single half-steps (one-step approximations, warm starts).
class SinkhornScaler {
 public:
  /// `log_kernel` is lambda * log M (or -lambda * C); -inf marks zeros.
  SinkhornScaler(Matrix log_kernel, Vector r, Vector c, bool log_domain);
  /// Linear-domain engine on an explicit kernel.
  SinkhornScaler(const NonnegMatrix& kernel, Vector r, Vector c);

  /// Initial log scalings; row i is multiplied by exp(row[i]).
  void set_log_scalings(const Vector& row, const Vector& col);

  void normalize_rows();
  void normalize_cols();
  /// One damped Newton step on the dual potentials toward (r, c). Returns
  /// false, leaving the state unchanged, if the Hessian is singular or no
  /// step length decreases the dual objective.
  bool newton_step();

  /// L1 residual of both marginals of the current plan.
  double residual() const;
  Matrix plan() const;
  Vector log_row_scaling() const;
  Vector log_col_scaling() const;
  /// False once the linear domain produced a non-finite or zero scaling.
  bool finite() const { return finite_; }

 private:
  void rebuild_kernel();
  void absorb();

  Matrix log_kernel_;
  Vector r_, c_;
  bool log_domain_;
  Matrix kernel_;  // exp(log_kernel + f + g)
  Vector f_, g_;   // absorbed log scalings (log domain only)
  Vector u_, v_;   // pending multiplicative scalings
  bool finite_ = true;
};

}  // namespace eot
