#include "eot/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "eot/error.hpp"

namespace eot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Pending scalings beyond e^kAbsorb are folded into the log potentials.
constexpr double kAbsorb = 50.0;
// lambda * max|log M| above which kAuto selects the log domain.
constexpr double kLogDomainThreshold = 500.0;
constexpr int kMaxNewtonSteps = 60;

double log_sum_exp(const double* first, Index count, Index stride, const double* shift) {
  double hi = kNegInf;
  for (Index k = 0; k < count; ++k) hi = std::max(hi, first[k * stride] + shift[k]);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (Index k = 0; k < count; ++k) acc += std::exp(first[k * stride] + shift[k] - hi);
  return hi + std::log(acc);
}

Matrix log_of(const NonnegMatrix& m, double lambda) {
  Matrix out(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) {
      const double x = m(i, j);
      out(i, j) = x > 0.0 ? lambda * std::log(x) : kNegInf;
    }
  }
  return out;
}

void validate(const NonnegMatrix& m, const MarginalVector& r, const MarginalVector& c) {
  if (m.rows() != r.size() || m.cols() != c.size()) {
    throw PreconditionError("sinkhorn: matrix is " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + " but marginals have sizes " +
                            std::to_string(r.size()) + " and " + std::to_string(c.size()));
  }
  r.require_positive("row marginal");
  c.require_positive("column marginal");
  require_equal_mass(r, c);
  m.require_no_empty_lines();
}

SinkhornResult drive(SinkhornScaler& scaler, const SinkhornOptions& options, double lambda,
                     Domain domain) {
  SinkhornResult out;
  out.lambda = lambda;
  out.domain = domain;
  double res = scaler.residual();
  int it = 0;
  bool try_newton = options.accelerate;
  while (!(res <= options.tol) && it < options.max_iter && scaler.finite()) {
    if (try_newton && it >= options.newton_after) {
      try_newton = false;
      for (int k = 0; k < kMaxNewtonSteps && !(res <= options.tol); ++k) {
        if (!scaler.newton_step()) break;
        ++out.newton_steps;
        res = scaler.residual();
      }
      if (res <= options.tol) break;
    }
    scaler.normalize_rows();
    scaler.normalize_cols();
    res = scaler.residual();
    ++it;
  }
  out.iterations = it;
  out.residual = res;
  out.converged = scaler.finite() && res <= options.tol;
  if (!scaler.finite()) return out;

  out.plan = NonnegMatrix(scaler.plan());
  Vector a = scaler.log_row_scaling();
  Vector b = scaler.log_col_scaling();
  const double pin = b[b.size() - 1];
  out.alpha = (a.array() + pin) / lambda;
  out.beta = (b.array() - pin) / lambda;
  return out;
}

}  // namespace

const char* to_string(Domain d) {
  switch (d) {
    case Domain::kAuto: return "auto";
    case Domain::kLinear: return "linear";
    case Domain::kLog: return "log";
  }
  return "?";
}

// ---------------------------------------------------------------------------

SinkhornScaler::SinkhornScaler(Matrix log_kernel, Vector r, Vector c, bool log_domain)
    : log_kernel_(std::move(log_kernel)),
      r_(std::move(r)),
      c_(std::move(c)),
      log_domain_(log_domain),
      f_(Vector::Zero(log_kernel_.rows())),
      g_(Vector::Zero(log_kernel_.cols())),
      u_(Vector::Ones(log_kernel_.rows())),
      v_(Vector::Ones(log_kernel_.cols())) {
  if (log_domain_) {
    // Start with every row maximum at exp(0).
    for (Index i = 0; i < log_kernel_.rows(); ++i) {
      const double hi = log_kernel_.row(i).maxCoeff();
      f_[i] = std::isfinite(hi) ? -hi : 0.0;
    }
  }
  rebuild_kernel();
}

SinkhornScaler::SinkhornScaler(const NonnegMatrix& kernel, Vector r, Vector c)
    : r_(std::move(r)),
      c_(std::move(c)),
      log_domain_(false),
      kernel_(kernel.entries()),
      f_(Vector::Zero(kernel.rows())),
      g_(Vector::Zero(kernel.cols())),
      u_(Vector::Ones(kernel.rows())),
      v_(Vector::Ones(kernel.cols())) {}

void SinkhornScaler::rebuild_kernel() {
  kernel_.resize(log_kernel_.rows(), log_kernel_.cols());
  for (Index j = 0; j < kernel_.cols(); ++j) {
    for (Index i = 0; i < kernel_.rows(); ++i) {
      const double lk = log_kernel_(i, j);
      kernel_(i, j) = lk == kNegInf ? 0.0 : std::exp(lk + f_[i] + g_[j]);
    }
  }
}

void SinkhornScaler::absorb() {
  f_.array() += u_.array().log();
  g_.array() += v_.array().log();
  u_.setOnes();
  v_.setOnes();
  rebuild_kernel();
}

void SinkhornScaler::set_log_scalings(const Vector& row, const Vector& col) {
  if (log_domain_) {
    f_ = row;
    g_ = col;
    u_.setOnes();
    v_.setOnes();
    rebuild_kernel();
  } else {
    u_ = row.array().exp();
    v_ = col.array().exp();
  }
}

void SinkhornScaler::normalize_rows() {
  const Vector s = kernel_ * v_;
  bool ok = true;
  for (Index i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0) || !std::isfinite(s[i])) ok = false;
  }
  if (ok) {
    u_ = r_.array() / s.array();
    ok = u_.allFinite() && (u_.array() > 0.0).all();
  }
  if (!log_domain_) {
    finite_ = finite_ && ok;
    return;
  }
  if (!ok) {
    // Exact log-sum-exp update for rows whose kernel sum under/overflowed.
    u_.setOnes();
    g_.array() += v_.array().log();
    v_.setOnes();
    for (Index i = 0; i < log_kernel_.rows(); ++i) {
      f_[i] = std::log(r_[i]) -
              log_sum_exp(&log_kernel_(i, 0), log_kernel_.cols(), log_kernel_.rows(), g_.data());
    }
    rebuild_kernel();
    return;
  }
  if (u_.array().log().abs().maxCoeff() > kAbsorb) absorb();
}

void SinkhornScaler::normalize_cols() {
  const Vector s = kernel_.transpose() * u_;
  bool ok = true;
  for (Index j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0) || !std::isfinite(s[j])) ok = false;
  }
  if (ok) {
    v_ = c_.array() / s.array();
    ok = v_.allFinite() && (v_.array() > 0.0).all();
  }
  if (!log_domain_) {
    finite_ = finite_ && ok;
    return;
  }
  if (!ok) {
    f_.array() += u_.array().log();
    u_.setOnes();
    v_.setOnes();
    for (Index j = 0; j < log_kernel_.cols(); ++j) {
      g_[j] = std::log(c_[j]) -
              log_sum_exp(log_kernel_.col(j).data(), log_kernel_.rows(), 1, f_.data());
    }
    rebuild_kernel();
    return;
  }
  if (v_.array().log().abs().maxCoeff() > kAbsorb) absorb();
}

bool SinkhornScaler::newton_step() {
  if (!finite_) return false;
  const Index n = kernel_.rows();
  const Index m = kernel_.cols();
  const Matrix p = u_.asDiagonal() * kernel_ * v_.asDiagonal();
  const Vector rs = p.rowwise().sum();
  const Vector cs = p.colwise().sum().transpose();

  // Hessian of psi(f, g) = sum_ij P_ij - r.f - c.g with g[m-1] fixed.
  const Index dim = n + m - 1;
  Matrix h = Matrix::Zero(dim, dim);
  h.topLeftCorner(n, n).diagonal() = rs;
  h.topRightCorner(n, m - 1) = p.leftCols(m - 1);
  h.bottomLeftCorner(m - 1, n) = p.leftCols(m - 1).transpose();
  h.bottomRightCorner(m - 1, m - 1).diagonal() = cs.head(m - 1);
  Vector rhs(dim);
  rhs.head(n) = r_ - rs;
  rhs.tail(m - 1) = (c_ - cs).head(m - 1);
  const Eigen::LDLT<Matrix> ldlt(h);
  if (ldlt.info() != Eigen::Success) return false;
  const Vector x = ldlt.solve(rhs);
  if (!x.allFinite()) return false;
  Vector df = x.head(n);
  Vector dg = Vector::Zero(m);
  dg.head(m - 1) = x.tail(m - 1);

  // Backtracking on psi; slope = -rhs.x.
  const double slope = -rhs.dot(x);
  if (!(slope < 0.0)) return false;
  const double psi0 = p.sum();
  double t = 1.0;
  for (int k = 0; k < 40; ++k, t *= 0.5) {
    const Vector ef = (t * df).array().exp();
    const Vector eg = (t * dg).array().exp();
    const double psi = (ef.asDiagonal() * p * eg.asDiagonal()).sum() - t * (r_.dot(df) + c_.dot(dg));
    if (std::isfinite(psi) && psi <= psi0 + 1e-4 * t * slope) {
      u_.array() *= ef.array();
      v_.array() *= eg.array();
      if (!u_.allFinite() || !v_.allFinite() || (u_.array() <= 0.0).any() || (v_.array() <= 0.0).any()) {
        finite_ = false;
        return false;
      }
      if (log_domain_ && std::max(u_.array().log().abs().maxCoeff(), v_.array().log().abs().maxCoeff()) > kAbsorb) {
        absorb();
      }
      return true;
    }
  }
  return false;
}

double SinkhornScaler::residual() const {
  if (!finite_) return std::numeric_limits<double>::infinity();
  const Vector rows = u_.array() * (kernel_ * v_).array();
  const Vector cols = v_.array() * (kernel_.transpose() * u_).array();
  const double res = (rows - r_).cwiseAbs().sum() + (cols - c_).cwiseAbs().sum();
  return std::isfinite(res) ? res : std::numeric_limits<double>::infinity();
}

Matrix SinkhornScaler::plan() const {
  return u_.asDiagonal() * kernel_ * v_.asDiagonal();
}

Vector SinkhornScaler::log_row_scaling() const { return f_.array() + u_.array().log(); }
Vector SinkhornScaler::log_col_scaling() const { return g_.array() + v_.array().log(); }

// ---------------------------------------------------------------------------

NonnegMatrix elementwise_power(const NonnegMatrix& m, double lambda) {
  if (!(lambda > 0.0)) throw PreconditionError("elementwise_power: lambda must be > 0");
  if (lambda == 1.0) return m;
  Matrix out = m.entries();
  for (Index k = 0; k < out.size(); ++k) {
    double& x = out.data()[k];
    x = x > 0.0 ? std::pow(x, lambda) : 0.0;
  }
  return NonnegMatrix(std::move(out));
}

NonnegMatrix row_normalize(const NonnegMatrix& m, const MarginalVector& r) {
  if (r.size() != m.rows()) throw PreconditionError("row_normalize: size mismatch");
  if (auto i = m.first_zero_row()) {
    throw StructuralError(StructuralError::Axis::kRow, static_cast<std::size_t>(*i));
  }
  const Vector scale = r.values().array() / m.row_sums().array();
  return NonnegMatrix(Matrix(scale.asDiagonal() * m.entries()));
}

NonnegMatrix col_normalize(const NonnegMatrix& m, const MarginalVector& c) {
  if (c.size() != m.cols()) throw PreconditionError("col_normalize: size mismatch");
  if (auto j = m.first_zero_col()) {
    throw StructuralError(StructuralError::Axis::kColumn, static_cast<std::size_t>(*j));
  }
  const Vector scale = c.values().array() / m.col_sums().array();
  return NonnegMatrix(Matrix(m.entries() * scale.asDiagonal()));
}

NonnegMatrix row_stochastic(const NonnegMatrix& m) {
  return row_normalize(m, MarginalVector(Vector(Vector::Ones(m.rows()))));
}

NonnegMatrix col_stochastic(const NonnegMatrix& m) {
  return col_normalize(m, MarginalVector(Vector(Vector::Ones(m.cols()))));
}

double marginal_residual(const Matrix& p, const Vector& r, const Vector& c) {
  return (p.rowwise().sum() - r).cwiseAbs().sum() +
         (p.colwise().sum().transpose() - c).cwiseAbs().sum();
}

SinkhornResult sinkhorn_log_kernel(const Matrix& log_kernel, const MarginalVector& r,
                                   const MarginalVector& c, double lambda,
                                   const SinkhornOptions& options, const Vector* warm_row,
                                   const Vector* warm_col) {
  if (!(lambda > 0.0)) throw PreconditionError("sinkhorn: lambda must be > 0");
  const Matrix kernel_pattern = (log_kernel.array() > kNegInf).cast<double>();
  for (Index k = 0; k < log_kernel.size(); ++k) {
    if (std::isnan(log_kernel.data()[k]) || log_kernel.data()[k] == -kNegInf) {
      throw PreconditionError("sinkhorn: log kernel has NaN or +inf entries");
    }
  }
  const NonnegMatrix pattern_matrix(kernel_pattern);
  validate(pattern_matrix, r, c);

  Matrix lk = log_kernel;
  Index pruned = 0;
  std::optional<FeasibilityResult> feasibility;
  if (options.check_feasibility) {
    feasibility = feasibility_check(SupportPattern::of(pattern_matrix), r, c);
  }
  if (options.restrict_support && !pattern_matrix.full_support()) {
    const SupportPattern full = SupportPattern::of(pattern_matrix);
    const SupportPattern keep = scalable_support(full, r, c);
    if (keep.rows() == full.rows()) {
      for (Index i = 0; i < lk.rows(); ++i) {
        for (Index j = 0; j < lk.cols(); ++j) {
          if (full(i, j) && !keep(i, j)) {
            lk(i, j) = kNegInf;
            ++pruned;
          }
        }
      }
    }
  }

  SinkhornScaler scaler(std::move(lk), r.values(), c.values(), true);
  if (warm_row != nullptr && warm_col != nullptr) scaler.set_log_scalings(*warm_row, *warm_col);
  SinkhornResult out = drive(scaler, options, lambda, Domain::kLog);
  out.pruned_entries = pruned;
  out.feasibility = std::move(feasibility);
  return out;
}

SinkhornResult sinkhorn(const NonnegMatrix& m, const MarginalVector& r,
                        const MarginalVector& c, double lambda,
                        const SinkhornOptions& options) {
  if (!(lambda > 0.0)) throw PreconditionError("sinkhorn: lambda must be > 0");
  validate(m, r, c);

  Domain domain = options.domain;
  if (domain == Domain::kAuto) {
    double spread = 0.0;
    for (Index k = 0; k < m.entries().size(); ++k) {
      const double x = m.entries().data()[k];
      if (x > 0.0) spread = std::max(spread, std::abs(std::log(x)));
    }
    domain = lambda * spread > kLogDomainThreshold ? Domain::kLog : Domain::kLinear;
  }
  if (domain == Domain::kLog) return sinkhorn_log_kernel(log_of(m, lambda), r, c, lambda, options);

  NonnegMatrix work = m;
  Index pruned = 0;
  std::optional<FeasibilityResult> feasibility;
  if (options.check_feasibility) feasibility = feasibility_check(SupportPattern::of(m), r, c);
  if (options.restrict_support && !m.full_support()) {
    const SupportPattern full = SupportPattern::of(m);
    const SupportPattern keep = scalable_support(full, r, c);
    if (keep.rows() == full.rows() && keep.count() != full.count()) {
      Matrix e = m.entries();
      for (Index i = 0; i < e.rows(); ++i) {
        for (Index j = 0; j < e.cols(); ++j) {
          if (full(i, j) && !keep(i, j)) {
            e(i, j) = 0.0;
            ++pruned;
          }
        }
      }
      work = NonnegMatrix(std::move(e));
    }
  }

  // Linear domain: the kernel is M^lambda itself and no absorption happens.
  SinkhornScaler scaler(elementwise_power(work, lambda), r.values(), c.values());
  SinkhornResult out = drive(scaler, options, lambda, Domain::kLinear);
  if (!scaler.finite() && options.domain == Domain::kAuto) {
    SinkhornOptions retry = options;
    retry.domain = Domain::kLog;
    return sinkhorn(m, r, c, lambda, retry);
  }
  if (!scaler.finite()) {
    // Forced linear domain left the floating-point range: report as diverged.
    out.plan = NonnegMatrix(Matrix::Zero(m.rows(), m.cols()));
    out.alpha = Vector::Zero(m.rows());
    out.beta = Vector::Zero(m.cols());
  }
  out.pruned_entries = pruned;
  out.feasibility = std::move(feasibility);
  return out;
}

}  // namespace eot
