#include "eot/planning.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "eot/error.hpp"
#include "eot/feasibility.hpp"

namespace eot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector resolve_expense(const Expense& expense, const MarginalVector& prior, const char* what) {
  if (!expense) return -prior.values().array().log();
  if (expense->size() != prior.size()) {
    throw PreconditionError(std::string(what) + ": expense has size " +
                            std::to_string(expense->size()) + ", expected " +
                            std::to_string(prior.size()));
  }
  if (!expense->allFinite()) throw PreconditionError(std::string(what) + ": expense not finite");
  return *expense;
}

// -log of a stochastic matrix plus a per-row (or per-column) expense.
CostMatrix cost_from(const NonnegMatrix& likelihood, Vector expense, bool per_row) {
  CostMatrix out{Matrix(likelihood.rows(), likelihood.cols()), std::move(expense)};
  for (Index j = 0; j < likelihood.cols(); ++j) {
    for (Index i = 0; i < likelihood.rows(); ++i) {
      const double p = likelihood(i, j);
      out.entries(i, j) = p > 0.0 ? -std::log(p) + (per_row ? out.expense[i] : out.expense[j]) : kInf;
    }
  }
  return out;
}

Matrix scale_rows(const Matrix& m, const Vector& s) { return s.asDiagonal() * m; }
Matrix scale_cols(const Matrix& m, const Vector& s) { return m * s.asDiagonal(); }

bool lines_sum_to_one(const Matrix& m, bool columns) {
  const Vector sums = columns ? Vector(m.colwise().sum().transpose()) : Vector(m.rowwise().sum());
  return ((sums.array() - 1.0).abs() <= 1e-8).all();
}

}  // namespace

CommonGround::CommonGround(NonnegMatrix m, MarginalVector prior_data, MarginalVector prior_hyp)
    : m_(std::move(m)), prior_data_(std::move(prior_data)), prior_hyp_(std::move(prior_hyp)) {
  if (m_.rows() != prior_data_.size() || m_.cols() != prior_hyp_.size()) {
    throw PreconditionError("common ground: matrix is " + std::to_string(m_.rows()) + "x" +
                            std::to_string(m_.cols()) + " but priors have sizes " +
                            std::to_string(prior_data_.size()) + " and " +
                            std::to_string(prior_hyp_.size()));
  }
  prior_data_.require_positive("prior over data");
  prior_hyp_.require_positive("prior over hypotheses");
  require_equal_mass(prior_data_, prior_hyp_);
  m_.require_no_empty_lines();
}

CommonGround CommonGround::with_uniform_priors(NonnegMatrix m) {
  const Index n = m.rows();
  const Index k = m.cols();
  return CommonGround(std::move(m), MarginalVector::uniform(n), MarginalVector::uniform(k));
}

const char* to_string(PlanKind kind) {
  switch (kind) {
    case PlanKind::kJoint: return "joint";
    case PlanKind::kTeacherConditional: return "teacher_conditional";
    case PlanKind::kLearnerConditional: return "learner_conditional";
  }
  return "?";
}

Plan::Plan(NonnegMatrix matrix, PlanKind kind, double lambda)
    : matrix_(std::move(matrix)), kind_(kind), lambda_(lambda) {
  if (!(lambda_ > 0.0)) throw PreconditionError("plan: lambda must be > 0");
  if (kind_ == PlanKind::kTeacherConditional && !lines_sum_to_one(matrix_.entries(), true)) {
    throw PreconditionError("teacher-conditional plan: columns must sum to 1");
  }
  if (kind_ == PlanKind::kLearnerConditional && !lines_sum_to_one(matrix_.entries(), false)) {
    throw PreconditionError("learner-conditional plan: rows must sum to 1");
  }
}

CostMatrix teacher_cost(const CommonGround& ground, const Expense& expense) {
  return cost_from(row_stochastic(ground.matrix()),
                   resolve_expense(expense, ground.prior_data(), "teacher_cost"), true);
}

CostMatrix learner_cost(const CommonGround& ground, const Expense& expense) {
  return cost_from(col_stochastic(ground.matrix()),
                   resolve_expense(expense, ground.prior_hyp(), "learner_cost"), false);
}

SinkhornResult eot_plan(const CostMatrix& cost, const MarginalVector& r, const MarginalVector& c,
                        double lambda, const SinkhornOptions& options) {
  if (!(lambda > 0.0)) throw PreconditionError("eot_plan: lambda must be > 0");
  Matrix log_kernel(cost.entries.rows(), cost.entries.cols());
  for (Index j = 0; j < log_kernel.cols(); ++j) {
    for (Index i = 0; i < log_kernel.rows(); ++i) {
      const double x = cost.entries(i, j);
      if (std::isnan(x) || x == -kInf) throw PreconditionError("eot_plan: cost has NaN or -inf");
      log_kernel(i, j) = x == kInf ? -kInf : -lambda * x;
    }
  }
  return sinkhorn_log_kernel(log_kernel, r, c, lambda, options);
}

Plan teacher_view(const NonnegMatrix& joint, double lambda) {
  return Plan(col_stochastic(joint), PlanKind::kTeacherConditional, lambda);
}

Plan learner_view(const NonnegMatrix& joint, double lambda) {
  return Plan(row_stochastic(joint), PlanKind::kLearnerConditional, lambda);
}

AgentPlan teaching_plan(const CommonGround& ground, double lambda, const Expense& expense,
                        const SinkhornOptions& options) {
  SinkhornResult sk =
      eot_plan(teacher_cost(ground, expense), ground.prior_data(), ground.prior_hyp(), lambda, options);
  Plan joint(sk.plan, PlanKind::kJoint, lambda);
  Plan conditional = teacher_view(sk.plan, lambda);
  return {std::move(sk), std::move(joint), std::move(conditional)};
}

AgentPlan learning_plan(const CommonGround& ground, double lambda, const Expense& expense,
                        const SinkhornOptions& options) {
  SinkhornResult sk =
      eot_plan(learner_cost(ground, expense), ground.prior_data(), ground.prior_hyp(), lambda, options);
  Plan joint(sk.plan, PlanKind::kJoint, lambda);
  Plan conditional = learner_view(sk.plan, lambda);
  return {std::move(sk), std::move(joint), std::move(conditional)};
}

CooperativeInferenceResult cooperative_inference(const CommonGround& ground, double tol,
                                                 int max_iter) {
  const Vector& pd = ground.prior_data().values();
  const Vector& ph = ground.prior_hyp().values();

  // Consistent pairs that no fixed point can use are dropped up front.
  Matrix m = ground.matrix().entries();
  if (!ground.matrix().full_support()) {
    const SupportPattern keep =
        scalable_support(SupportPattern::of(ground.matrix()), ground.prior_data(), ground.prior_hyp());
    if (keep.rows() == m.rows()) {
      for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
          if (!keep(i, j)) m(i, j) = 0.0;
    }
  }

  auto normalize_rows = [](Matrix x) {
    const Vector s = x.rowwise().sum();
    return Matrix(s.cwiseInverse().asDiagonal() * x);
  };
  auto normalize_cols = [](Matrix x) {
    const Vector s = x.colwise().sum().transpose();
    return Matrix(x * s.cwiseInverse().asDiagonal());
  };

  // Naive learner, then alternate the two Bayes updates.
  Matrix learner = normalize_rows(scale_cols(m, ph));
  Matrix teacher = normalize_cols(scale_rows(learner, pd));
  auto residual = [&] {
    const Matrix from_learner = scale_rows(learner, pd);  // row sums exact
    const Matrix from_teacher = scale_cols(teacher, ph);  // column sums exact
    return (from_learner.colwise().sum().transpose() - ph).cwiseAbs().sum() +
           (from_teacher.rowwise().sum() - pd).cwiseAbs().sum();
  };
  double res = residual();
  int it = 0;
  while (!(res <= tol) && it < max_iter) {
    learner = normalize_rows(scale_cols(teacher, ph));
    teacher = normalize_cols(scale_rows(learner, pd));
    res = residual();
    ++it;
  }
  if (!teacher.allFinite() || !learner.allFinite()) {
    throw PreconditionError("cooperative_inference: iteration left the floating-point range");
  }
  return {Plan(NonnegMatrix(teacher), PlanKind::kTeacherConditional, 1.0),
          Plan(NonnegMatrix(learner), PlanKind::kLearnerConditional, 1.0), it, res, res <= tol};
}

Plan one_step_teacher(const CommonGround& ground, double lambda, const Expense& expense) {
  if (!(lambda > 0.0)) throw PreconditionError("one_step_teacher: lambda must be > 0");
  const Vector s = resolve_expense(expense, ground.prior_data(), "one_step_teacher");
  const NonnegMatrix l0 = elementwise_power(row_stochastic(ground.matrix()), lambda);
  const Vector weight = (-lambda * s.array()).exp();
  const NonnegMatrix weighted(scale_rows(l0.entries(), weight));
  return Plan(col_stochastic(weighted), PlanKind::kTeacherConditional, lambda);
}

Plan one_step_listener(const Plan& teacher, const MarginalVector& prior_hyp) {
  if (teacher.kind() != PlanKind::kTeacherConditional) {
    throw ContractError(std::string("one_step_listener: expected a teacher-conditional plan, got ") +
                        to_string(teacher.kind()));
  }
  if (prior_hyp.size() != teacher.cols()) {
    throw PreconditionError("one_step_listener: prior size does not match plan columns");
  }
  const NonnegMatrix joint(scale_cols(teacher.matrix().entries(), prior_hyp.values()));
  return Plan(row_stochastic(joint), PlanKind::kLearnerConditional, teacher.lambda());
}

Plan argmax_plan(const NonnegMatrix& utility) {
  Matrix out = Matrix::Zero(utility.rows(), utility.cols());
  for (Index j = 0; j < utility.cols(); ++j) {
    Index best = 0;
    for (Index i = 1; i < utility.rows(); ++i) {
      if (utility(i, j) > utility(best, j)) best = i;
    }
    out(best, j) = 1.0;
  }
  return Plan(NonnegMatrix(std::move(out)), PlanKind::kTeacherConditional, kInf);
}

}  // namespace eot
