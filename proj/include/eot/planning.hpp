#pragma once

// Cooperative-communication plans: entropic (Sinkhorn) teaching and
// learning plans, the cooperative-inference fixed point, and the one-step
// and argmax approximations.

#include <optional>

#include "eot/matrix.hpp"
#include "eot/sinkhorn.hpp"

namespace eot {

/// Shared consistency matrix M (|D| x |H|) and the priors over data and
/// hypotheses. Datum i is consistent with hypothesis j when M_ij > 0.
class CommonGround {
 public:
  /// Throws PreconditionError on mismatched sizes, non-positive priors or
  /// unequal prior masses.
  CommonGround(NonnegMatrix m, MarginalVector prior_data, MarginalVector prior_hyp);
  /// Uniform priors of unit mass.
  static CommonGround with_uniform_priors(NonnegMatrix m);

  const NonnegMatrix& matrix() const { return m_; }
  const MarginalVector& prior_data() const { return prior_data_; }
  const MarginalVector& prior_hyp() const { return prior_hyp_; }
  Index num_data() const { return m_.rows(); }
  Index num_hyp() const { return m_.cols(); }

 private:
  NonnegMatrix m_;
  MarginalVector prior_data_;
  MarginalVector prior_hyp_;
};

enum class PlanKind {
  kJoint,
  kTeacherConditional,  ///< columns sum to 1: P_T(d | h)
  kLearnerConditional,  ///< rows sum to 1: P_L(h | d)
};

const char* to_string(PlanKind kind);

/// A plan matrix tagged with its kind and the lambda it was built with.
class Plan {
 public:
  /// Conditional kinds are checked to be column (row) stochastic within
  /// 1e-8 per line; otherwise PreconditionError.
  Plan(NonnegMatrix matrix, PlanKind kind, double lambda);

  const NonnegMatrix& matrix() const { return matrix_; }
  PlanKind kind() const { return kind_; }
  double lambda() const { return lambda_; }
  Index rows() const { return matrix_.rows(); }
  Index cols() const { return matrix_.cols(); }

 private:
  NonnegMatrix matrix_;
  PlanKind kind_;
  double lambda_;
};

/// Cost matrix (+infinity where the underlying likelihood vanishes) and
/// the selection expense that was added to it.
struct CostMatrix {
  Matrix entries;
  Vector expense;
};

/// Selection expense argument: nullopt selects the default -log prior.
using Expense = std::optional<Vector>;

/// C^T_ij = -log L0(h_j | d_i) + S_T(d_i), with L0 the row normalization
/// of M. Default S_T(d) = -log P0(d).
CostMatrix teacher_cost(const CommonGround& ground, const Expense& expense = std::nullopt);
/// C^L_ij = -log T0(d_i | h_j) + S_L(h_j), with T0 the column
/// normalization of M. Default S_L(h) = -log P0(h).
CostMatrix learner_cost(const CommonGround& ground, const Expense& expense = std::nullopt);

/// Entropic plan SK(exp(-lambda C)) with marginals (r, c), scaled in the log
/// domain straight from -lambda C. Potentials refer to the kernel
/// exp(-lambda C).
SinkhornResult eot_plan(const CostMatrix& cost, const MarginalVector& r, const MarginalVector& c,
                        double lambda, const SinkhornOptions& options = {});

/// A joint plan together with its conditional view and the scaling
/// diagnostics that produced it.
struct AgentPlan {
  SinkhornResult scaling;
  Plan joint;
  Plan conditional;
};

/// SK of L0^[lambda] (expense-weighted) to (prior_data, prior_hyp); the
/// conditional view is column stochastic.
AgentPlan teaching_plan(const CommonGround& ground, double lambda,
                        const Expense& expense = std::nullopt,
                        const SinkhornOptions& options = {});
/// SK of T0^[lambda] (expense-weighted); the conditional view is row
/// stochastic.
AgentPlan learning_plan(const CommonGround& ground, double lambda,
                        const Expense& expense = std::nullopt,
                        const SinkhornOptions& options = {});

struct CooperativeInferenceResult {
  Plan teacher;  ///< P_T(d | h)
  Plan learner;  ///< P_L(h | d)
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// Fixed point of the cooperative-inference equations
///   P_L(h|d) = P_T(d|h) P0(h) / P_L(d),   P_T(d|h) = P_L(h|d) P0(d) / P_T(h),
/// iterated in conditional form from the naive learner P_L0(h|d) ~ M_dh P0(h).
/// The residual is the L1 marginal error of both implied joints.
CooperativeInferenceResult cooperative_inference(const CommonGround& ground, double tol = 1e-9,
                                                 int max_iter = 10'000);

/// Column normalization of L0^[lambda] weighted by exp(-lambda S_T): one
/// Sinkhorn half-step, the pragmatic-speaker / Bayesian-teaching plan.
Plan one_step_teacher(const CommonGround& ground, double lambda,
                      const Expense& expense = std::nullopt);

/// Bayes inversion P_L(h|d) ~ P_T(d|h) P0(h), row normalized.
Plan one_step_listener(const Plan& teacher, const MarginalVector& prior_hyp);

/// Deterministic teacher: each column puts mass 1 on its largest row, ties
/// to the lowest index. A zero column selects row 0. The plan's lambda is
/// +infinity, the limit it represents.
Plan argmax_plan(const NonnegMatrix& utility);

/// Conditional views of a joint plan.
Plan teacher_view(const NonnegMatrix& joint, double lambda);
Plan learner_view(const NonnegMatrix& joint, double lambda);

}  // namespace eot
