#include "eot/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "eot/error.hpp"

namespace eot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Smallest/largest LDLT pivot (and reciprocal condition estimate) below
// which H counts as singular.
constexpr double kMinPivotRatio = 1e-13;

void check_shapes(const NonnegMatrix& plan, const NonnegMatrix& m, const MarginalVector& r,
                  const MarginalVector& c) {
  if (plan.rows() != m.rows() || plan.cols() != m.cols() || r.size() != m.rows() ||
      c.size() != m.cols()) {
    throw PreconditionError("gradients: plan, matrix and marginal sizes disagree");
  }
}

void require_converged(const SinkhornResult& plan) {
  if (!plan.converged) {
    throw PreconditionError("gradients: the Sinkhorn plan did not converge (residual " +
                            std::to_string(plan.residual) + ")");
  }
}

// dP = diag(u) P + P diag(v).
Matrix scaled_plan(const Matrix& p, const Vector& u, const Vector& v) {
  return u.asDiagonal() * p + p * v.asDiagonal();
}

Matrix log_kernel_of(const Matrix& m, double lambda) {
  Matrix out(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i)
      out(i, j) = m(i, j) > 0.0 ? lambda * std::log(m(i, j)) : kNegInf;
  return out;
}

// Phi at a nearby point, warm-started from the base potentials.
class Prober {
 public:
  Prober(const NonnegMatrix& m, const MarginalVector& r, const MarginalVector& c, double lambda,
         const FdOptions& options)
      : m_(m), r_(r), c_(c), lambda_(lambda) {
    opts_.tol = options.tol;
    opts_.max_iter = 100'000;
    opts_.domain = Domain::kLog;
    const SinkhornResult base =
        sinkhorn_log_kernel(log_kernel_of(m.entries(), lambda), r, c, lambda, opts_);
    if (!base.converged) {
      throw PreconditionError("finite differences: base plan did not reach tol " +
                              std::to_string(options.tol));
    }
    warm_row_ = lambda * base.alpha;
    warm_col_ = lambda * base.beta;
  }

  Matrix at(const Matrix& m, const Vector& r, const Vector& c) const {
    const SinkhornResult res = sinkhorn_log_kernel(log_kernel_of(m, lambda_), MarginalVector(r),
                                                   MarginalVector(c), lambda_, opts_, &warm_row_,
                                                   &warm_col_);
    if (!res.converged) throw PreconditionError("finite differences: a probe did not converge");
    return res.plan.entries();
  }

  Matrix central(const Matrix& dm, const Vector& dr, const Vector& dc, double h) const {
    const Matrix plus = at(m_.entries() + 0.5 * h * dm, r_.values() + 0.5 * h * dr,
                           c_.values() + 0.5 * h * dc);
    const Matrix minus = at(m_.entries() - 0.5 * h * dm, r_.values() - 0.5 * h * dr,
                            c_.values() - 0.5 * h * dc);
    return (plus - minus) / h;
  }

 private:
  const NonnegMatrix& m_;
  const MarginalVector& r_;
  const MarginalVector& c_;
  double lambda_;
  SinkhornOptions opts_;
  Vector warm_row_, warm_col_;
};

SinkhornResult transposed(const SinkhornResult& plan) {
  SinkhornResult t;
  t.plan = plan.plan.transpose();
  t.lambda = plan.lambda;
  t.converged = plan.converged;
  t.residual = plan.residual;
  return t;
}

}  // namespace

DualHessian::DualHessian(const NonnegMatrix& plan, const MarginalVector& r, const MarginalVector& c,
                         Index pinned)
    : n_(plan.rows()), m_(plan.cols()), pinned_(pinned < 0 ? plan.cols() - 1 : pinned) {
  if (r.size() != n_ || c.size() != m_) throw PreconditionError("dual Hessian: size mismatch");
  if (pinned_ >= m_) throw PreconditionError("dual Hessian: pinned column out of range");
  const Index dim = n_ + m_ - 1;
  Matrix h = Matrix::Zero(dim, dim);
  h.topLeftCorner(n_, n_).diagonal() = r.values();
  for (Index j = 0; j < m_; ++j) {
    const Index k = reduced_col(j);
    if (k < 0) continue;
    h.block(0, n_ + k, n_, 1) = plan.entries().col(j);
    h.block(n_ + k, 0, 1, n_) = plan.entries().col(j).transpose();
    h(n_ + k, n_ + k) = c[j];
  }
  ldlt_.compute(h);
  const Vector d = ldlt_.vectorD().cwiseAbs();
  const double pivot_ratio = d.size() == 0 ? 1.0 : d.minCoeff() / d.maxCoeff();
  if (ldlt_.info() != Eigen::Success || !(pivot_ratio > kMinPivotRatio) ||
      !(ldlt_.rcond() > kMinPivotRatio)) {
    std::ostringstream msg;
    msg << "dual Hessian is singular (pivot ratio " << pivot_ratio
        << "); gradients need a plan whose support connects all rows and columns, "
           "e.g. a strictly positive pattern";
    throw SingularSystemError(msg.str());
  }
}

Index DualHessian::reduced_col(Index j) const {
  if (j == pinned_) return -1;
  return j < pinned_ ? j : j - 1;
}

std::pair<Vector, Vector> DualHessian::solve(const Vector& rhs) const {
  if (rhs.size() != n_ + m_ - 1) throw PreconditionError("dual Hessian: rhs has the wrong length");
  const Vector x = ldlt_.solve(rhs);
  Vector u = x.head(n_);
  Vector v = Vector::Zero(m_);
  for (Index j = 0; j < m_; ++j) {
    const Index k = reduced_col(j);
    if (k >= 0) v[j] = x[n_ + k];
  }
  return {std::move(u), std::move(v)};
}

std::pair<Vector, Vector> hessian_solve(const SinkhornResult& plan, const MarginalVector& r,
                                        const MarginalVector& c, const Vector& rhs, Index pinned) {
  require_converged(plan);
  return DualHessian(plan.plan, r, c, pinned).solve(rhs);
}

std::vector<Matrix> grad_r(const SinkhornResult& plan, const NonnegMatrix& m, const MarginalVector& r,
                           const MarginalVector& c, double lambda, Index pinned) {
  require_converged(plan);
  check_shapes(plan.plan, m, r, c);
  if (!(lambda > 0.0)) throw PreconditionError("grad_r: lambda must be > 0");
  const DualHessian h(plan.plan, r, c, pinned);
  const Index n = m.rows();
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) {
    // Raising r_t moves the potentials by H^{-1} e_t; the sign is fixed by
    // the row-sum identity sum_j dP_tj = 1, which finite differences confirm.
    const auto [u, v] = h.solve(Vector::Unit(n + m.cols() - 1, t));
    out.push_back(scaled_plan(plan.plan.entries(), u, v));
  }
  return out;
}

std::vector<Matrix> grad_c(const SinkhornResult& plan, const NonnegMatrix& m, const MarginalVector& r,
                           const MarginalVector& c, double lambda) {
  std::vector<Matrix> slices = grad_r(transposed(plan), m.transpose(), c, r, lambda);
  for (Matrix& s : slices) s.transposeInPlace();
  return slices;
}

MatrixGradient grad_M(const SinkhornResult& plan, const NonnegMatrix& m, const MarginalVector& r,
                      const MarginalVector& c, double lambda, Index pinned) {
  require_converged(plan);
  check_shapes(plan.plan, m, r, c);
  if (!(lambda > 0.0)) throw PreconditionError("grad_M: lambda must be > 0");
  const DualHessian h(plan.plan, r, c, pinned);
  const Index n = m.rows();
  const Matrix& p = plan.plan.entries();
  MatrixGradient out;
  for (Index t = 0; t < m.cols(); ++t) {
    for (Index s = 0; s < n; ++s) {
      if (!(m(s, t) > 0.0)) continue;
      Vector rhs = Vector::Unit(n + m.cols() - 1, s);
      const Index k = h.reduced_col(t);
      if (k >= 0) rhs[n + k] = 1.0;
      const auto [u, v] = h.solve(rhs);
      Matrix slice = -scaled_plan(p, u, v);
      slice(s, t) += 1.0;
      slice *= lambda * p(s, t) / m(s, t);
      out.entries.emplace_back(s, t);
      out.slices.push_back(std::move(slice));
    }
  }
  return out;
}

GradientBundle compute_gradients(const NonnegMatrix& m, const MarginalVector& r, const MarginalVector& c,
                                 double lambda, double tol) {
  SinkhornOptions opts;
  opts.tol = tol;
  opts.max_iter = 100'000;
  GradientBundle b;
  b.lambda = lambda;
  b.base = sinkhorn(m, r, c, lambda, opts);
  b.wrt_r = grad_r(b.base, m, r, c, lambda);
  b.wrt_c = grad_c(b.base, m, r, c, lambda);
  b.wrt_M = grad_M(b.base, m, r, c, lambda);
  return b;
}

Matrix plan_derivative(const SinkhornResult& plan, const NonnegMatrix& m, const MarginalVector& r,
                       const MarginalVector& c, double lambda, const Matrix& dm, const Vector& dr,
                       const Vector& dc) {
  require_converged(plan);
  check_shapes(plan.plan, m, r, c);
  const Index n = m.rows();
  const Index k = m.cols();
  if (dm.rows() != n || dm.cols() != k || dr.size() != n || dc.size() != k) {
    throw PreconditionError("plan_derivative: direction sizes disagree with the problem");
  }
  const double scale = std::max({dr.cwiseAbs().sum(), dc.cwiseAbs().sum(), 1e-300});
  if (std::abs(dr.sum() - dc.sum()) > 1e-12 * scale) {
    throw PreconditionError("plan_derivative: direction changes sum(r) and sum(c) differently");
  }
  const Matrix& p = plan.plan.entries();
  Matrix w = Matrix::Zero(n, k);  // lambda * P o dM / M on the pattern
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < n; ++i)
      if (m(i, j) > 0.0) w(i, j) = lambda * p(i, j) * dm(i, j) / m(i, j);

  const DualHessian h(plan.plan, r, c);
  Vector rhs(n + k - 1);
  rhs.head(n) = dr - w.rowwise().sum();
  const Vector col = dc - w.colwise().sum().transpose();
  for (Index j = 0; j < k; ++j) {
    const Index q = h.reduced_col(j);
    if (q >= 0) rhs[n + q] = col[j];
  }
  const auto [u, v] = h.solve(rhs);
  return scaled_plan(p, u, v) + w;
}

Matrix contract(const GradientBundle& b, const Matrix& dm, const Vector& dr, const Vector& dc) {
  const Index n = b.base.plan.rows();
  const Index k = b.base.plan.cols();
  if (dm.rows() != n || dm.cols() != k || dr.size() != n || dc.size() != k) {
    throw PreconditionError("contract: direction sizes disagree with the bundle");
  }
  Matrix out = Matrix::Zero(n, k);
  for (Index t = 0; t < n; ++t) out += dr[t] * b.wrt_r[static_cast<std::size_t>(t)];
  for (Index s = 0; s < k; ++s) out += dc[s] * b.wrt_c[static_cast<std::size_t>(s)];
  // r-slices carry +e_last-column and c-slices +e_last-row; together that is
  // one copy of the last r-slice per unit of moved mass.
  out -= dc.sum() * b.wrt_r.back();
  for (std::size_t e = 0; e < b.wrt_M.entries.size(); ++e) {
    const auto [s, t] = b.wrt_M.entries[e];
    out += dm(s, t) * b.wrt_M.slices[e];
  }
  return out;
}

std::vector<Matrix> finite_difference(const std::function<Matrix(const Matrix&)>& f, const Matrix& x,
                                      double step) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(x.size()));
  for (Index k = 0; k < x.size(); ++k) {
    Matrix plus = x;
    Matrix minus = x;
    plus.data()[k] += 0.5 * step;
    minus.data()[k] -= 0.5 * step;
    out.push_back((f(plus) - f(minus)) / step);
  }
  return out;
}

FdGradient finite_difference_grad(const NonnegMatrix& m, const MarginalVector& r, const MarginalVector& c,
                                  double lambda, FdTarget target, const FdOptions& options) {
  if (!(options.step > 0.0)) throw PreconditionError("finite differences: step must be > 0");
  const Prober probe(m, r, c, lambda, options);
  const Index n = m.rows();
  const Index k = m.cols();
  const Matrix no_m = Matrix::Zero(n, k);
  FdGradient out;
  if (options.tol / options.step > 1e-5) {
    std::ostringstream msg;
    msg << "probe tolerance " << options.tol << " is coarse for step " << options.step
        << "; expect differences accurate only to about " << options.tol / options.step;
    out.warning = msg.str();
  }
  switch (target) {
    case FdTarget::kR:
      for (Index t = 0; t < n; ++t) {
        out.slices.push_back(
            probe.central(no_m, Vector::Unit(n, t), Vector::Unit(k, k - 1), options.step));
      }
      break;
    case FdTarget::kC:
      for (Index s = 0; s < k; ++s) {
        out.slices.push_back(
            probe.central(no_m, Vector::Unit(n, n - 1), Vector::Unit(k, s), options.step));
      }
      break;
    case FdTarget::kM:
      for (Index t = 0; t < k; ++t) {
        for (Index s = 0; s < n; ++s) {
          if (!(m(s, t) > 0.0)) continue;
          Matrix e = Matrix::Zero(n, k);
          e(s, t) = 1.0;
          out.entries.emplace_back(s, t);
          out.slices.push_back(probe.central(e, Vector::Zero(n), Vector::Zero(k), options.step));
        }
      }
      break;
  }
  return out;
}

Matrix finite_difference_direction(const NonnegMatrix& m, const MarginalVector& r, const MarginalVector& c,
                                   double lambda, const Matrix& dm, const Vector& dr, const Vector& dc,
                                   const FdOptions& options) {
  return Prober(m, r, c, lambda, options).central(dm, dr, dc, options.step);
}

double relative_error(const std::vector<Matrix>& analytic, const std::vector<Matrix>& reference) {
  if (analytic.size() != reference.size()) {
    throw PreconditionError("relative_error: slice counts differ");
  }
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    if (analytic[k].rows() != reference[k].rows() || analytic[k].cols() != reference[k].cols()) {
      throw PreconditionError("relative_error: slice shapes differ");
    }
    if (analytic[k].size() == 0) continue;
    diff = std::max(diff, (analytic[k] - reference[k]).cwiseAbs().maxCoeff());
    scale = std::max(scale, reference[k].cwiseAbs().maxCoeff());
  }
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

LinearApproximation linear_approx_plan(const SinkhornResult& base, const NonnegMatrix& m,
                                       const MarginalVector& r, const MarginalVector& c, const Matrix& dm,
                                       const Vector& dr, const Vector& dc) {
  Matrix est = base.plan.entries() + plan_derivative(base, m, r, c, base.lambda, dm, dr, dc);
  double clamped = 0.0;
  for (Index k = 0; k < est.size(); ++k) {
    double& x = est.data()[k];
    if (x < 0.0) {
      clamped -= x;
      x = 0.0;
    }
  }
  return {Plan(NonnegMatrix(std::move(est)), PlanKind::kJoint, base.lambda), clamped};
}

}  // namespace eot
