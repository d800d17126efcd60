#pragma once

// Derivatives of the Sinkhorn-limit map Phi(M, r, c) = SK(M^[lambda]; r, c)
// by the implicit function theorem on the dual potentials, a central
// finite-difference oracle, and the first-order repair of a plan after a
// change of common ground.
//
// Marginal directions must keep sum(r) = sum(c). A slice of the r-gradient
// is the derivative along (dr = e_t, dc = e_pinned): the pinned column
// absorbs the mass change. A c-gradient slice is the derivative along
// (dc = e_s, dr = e_last-row).

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "eot/matrix.hpp"
#include "eot/planning.hpp"
#include "eot/sinkhorn.hpp"

namespace eot {

using Entry = std::pair<Index, Index>;

/// Factorized dual Hessian at a plan P with marginals (r, c):
///
///   H = [ diag(r)   P~      ]
///       [ P~^T      diag(c~) ]
///
/// where ~ drops the pinned column (its potential is fixed at 0).
class DualHessian {
 public:
  /// Throws SingularSystemError when H cannot be factorized reliably
  /// (disconnected or nearly disconnected support).
  DualHessian(const NonnegMatrix& plan, const MarginalVector& r, const MarginalVector& c,
              Index pinned = -1);

  /// Solves H x = rhs (length n + m - 1) and returns (u, v) with v[pinned] = 0.
  std::pair<Vector, Vector> solve(const Vector& rhs) const;

  Index rows() const { return n_; }
  Index cols() const { return m_; }
  Index pinned() const { return pinned_; }
  /// Position of column j in the reduced system, or -1 for the pinned one.
  Index reduced_col(Index j) const;

 private:
  Index n_, m_, pinned_;
  Eigen::LDLT<Matrix> ldlt_;
};

/// One-shot solve with the Hessian of a converged Sinkhorn result.
/// PreconditionError if `plan` did not converge.
std::pair<Vector, Vector> hessian_solve(const SinkhornResult& plan, const MarginalVector& r,
                                        const MarginalVector& c, const Vector& rhs,
                                        Index pinned = -1);

/// n slices (dPhi / dr_t), each of the plan's shape. Row sums of slice t are
/// the indicator of row t.
std::vector<Matrix> grad_r(const SinkhornResult& plan, const NonnegMatrix& m,
                           const MarginalVector& r, const MarginalVector& c, double lambda,
                           Index pinned = -1);

/// m slices (dPhi / dc_s), computed as the r-gradient of the transposed
/// problem.
std::vector<Matrix> grad_c(const SinkhornResult& plan, const NonnegMatrix& m,
                           const MarginalVector& r, const MarginalVector& c, double lambda);

/// Derivative of the plan with respect to each positive entry of M.
struct MatrixGradient {
  std::vector<Entry> entries;
  std::vector<Matrix> slices;
};

MatrixGradient grad_M(const SinkhornResult& plan, const NonnegMatrix& m, const MarginalVector& r,
                      const MarginalVector& c, double lambda, Index pinned = -1);

struct GradientBundle {
  std::vector<Matrix> wrt_r;
  std::vector<Matrix> wrt_c;
  MatrixGradient wrt_M;
  double lambda = 1.0;
  SinkhornResult base;  ///< the limit the derivatives are taken at
};

/// Converges the plan to `tol` and evaluates all three gradients.
GradientBundle compute_gradients(const NonnegMatrix& m, const MarginalVector& r,
                                 const MarginalVector& c, double lambda, double tol = 1e-12);

/// Directional derivative of Phi along (dM, dr, dc). Requires
/// sum(dr) = sum(dc) (1e-12 relative to the larger norm). Entries of dM
/// where M is zero are ignored: they lie outside the smooth domain.
Matrix plan_derivative(const SinkhornResult& plan, const NonnegMatrix& m, const MarginalVector& r,
                       const MarginalVector& c, double lambda, const Matrix& dm, const Vector& dr,
                       const Vector& dc);

/// The same directional derivative assembled from a gradient bundle.
Matrix contract(const GradientBundle& bundle, const Matrix& dm, const Vector& dr, const Vector& dc);

enum class FdTarget { kR, kC, kM };

struct FdOptions {
  double step = 1e-6;
  double tol = 1e-12;  ///< Sinkhorn tolerance at every probe
};

struct FdGradient {
  std::vector<Matrix> slices;
  std::vector<Entry> entries;  ///< for kM: the probed entries, slice order
  /// Non-empty when the probe tolerance is coarse relative to the step.
  std::string warning;
};

/// Central differences of Phi, re-converging Sinkhorn (warm-started) at
/// every probe. r slices move (r_t, c_last) together by +-step/2; c slices
/// move (c_s, r_last); M slices move one positive entry.
FdGradient finite_difference_grad(const NonnegMatrix& m, const MarginalVector& r,
                                  const MarginalVector& c, double lambda, FdTarget target,
                                  const FdOptions& options = {});

/// Central differences of an arbitrary matrix map, one slice per entry of
/// `x` in column-major order.
std::vector<Matrix> finite_difference(const std::function<Matrix(const Matrix&)>& f,
                                      const Matrix& x, double step);

/// Central difference of Phi along (dM, dr, dc).
Matrix finite_difference_direction(const NonnegMatrix& m, const MarginalVector& r,
                                   const MarginalVector& c, double lambda, const Matrix& dm,
                                   const Vector& dr, const Vector& dc,
                                   const FdOptions& options = {});

/// max |A - F| / max |F| over a set of slices; 0 when both vanish.
double relative_error(const std::vector<Matrix>& analytic, const std::vector<Matrix>& reference);

struct LinearApproximation {
  Plan plan;                ///< joint, negative entries clamped to 0
  double clamp_mass = 0.0;  ///< total magnitude removed by clamping
};

/// First-order estimate of Phi(M + dM, r + dr, c + dc) from a converged
/// base limit at (M, r, c).
LinearApproximation linear_approx_plan(const SinkhornResult& base, const NonnegMatrix& m,
                                       const MarginalVector& r, const MarginalVector& c,
                                       const Matrix& dm, const Vector& dr, const Vector& dc);

}  // namespace eot
