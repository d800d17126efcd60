#pragma once

// Seeded Monte-Carlo studies of plan robustness: perturbation of one
// agent's common ground, lambda sweeps, and first-order repair of a plan,
// plus the small fixed scenarios (apples, numerals, sensitivity examples).
//
// Every sample draws from its own random stream, keyed by the study seed,
// the sample index and the matrix shape, so a study's rows do not depend
// on how samples are spread over worker threads.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "eot/matrix.hpp"
#include "eot/metrics.hpp"
#include "eot/planning.hpp"

namespace eot {

using Stream = std::mt19937_64;

/// Stream for one (shape, sample) cell of a study.
Stream sample_stream(std::uint64_t seed, std::uint64_t sample, Index rows, Index cols);

/// Symmetric Dirichlet draw of dimension n.
Vector sample_dirichlet(Index n, double alpha, Stream& stream);

enum class DirichletMode {
  kFlat,       ///< one draw over all rows*cols entries, filled row-major
  kPerColumn,  ///< an independent draw per column
};

NonnegMatrix sample_dirichlet_matrix(Index rows, Index cols, double alpha, DirichletMode mode,
                                     Stream& stream);

enum class PerturbTarget { kMatrix, kPriorHyp, kPriorData };

const char* to_string(PerturbTarget target);

struct PerturbationSpec {
  double fraction = 0.03;  ///< share of entries raised, in (0, 1]
  double magnitude = 0.5;  ///< each raised by magnitude * max entry
  PerturbTarget target = PerturbTarget::kMatrix;
};

/// ceil(fraction * count), at least 1.
Index perturbed_count(Index count, double fraction);

/// Distinct positions drawn uniformly without replacement, ascending.
std::vector<Index> perturbation_positions(Index count, double fraction, Stream& stream);

/// Adds magnitude * max(M) to the entries at the given row-major positions.
NonnegMatrix apply_perturbation(const NonnegMatrix& m, const std::vector<Index>& positions,
                                double magnitude);

/// Same for a prior, rescaled back to its original mass. A zero magnitude
/// returns the prior untouched.
MarginalVector apply_perturbation(const MarginalVector& prior, const std::vector<Index>& positions,
                                  double magnitude);

/// Draws positions for a matrix of m's size and applies them. The spec's
/// target is not consulted.
NonnegMatrix perturb(const NonnegMatrix& m, const PerturbationSpec& spec, Stream& stream);

enum class Comparison { kSkVsOnestep, kLinearApprox, kLambdaSweep };

/// Whose copy of the ground is perturbed in the CI comparisons. The other
/// agent plans on the original ground.
enum class Agent { kLearner, kTeacher };

const char* to_string(Agent agent);

const char* to_string(Comparison comparison);

struct Shape {
  Index rows = 0;
  Index cols = 0;
};

struct StudyConfig {
  Comparison comparison = Comparison::kSkVsOnestep;
  std::vector<Shape> shapes{{100, 100}};
  double dirichlet_alpha_M = 0.1;
  double dirichlet_alpha_prior = 0.1;
  std::vector<double> lambdas{1.0};
  PerturbationSpec spec;
  Agent perturbed_agent = Agent::kLearner;
  /// Magnitudes swept at every (shape, lambda); empty means {spec.magnitude}.
  std::vector<double> magnitudes;
  int samples = 1000;
  std::uint64_t seed = 0;

  /// Square matrices, flat Dirichlet 0.1 for M and the prior, 3% of
  /// entries raised by half the maximum.
  static StudyConfig perturbation_defaults();
  /// 50 x 50, 30% of entries raised by 0.3 of the maximum, prior
  /// Dirichlet 10, lambda in {0.1, 0.5, 1, 5, 10, 20, 40}.
  static StudyConfig lambda_sweep_defaults(double alpha_M);
  /// 50 rows, columns in {2, 5, 10, 20, 50, 100, 200}, per-column
  /// Dirichlet 1, uniform marginals, lambda 1.
  static StudyConfig linear_approx_defaults();
};

/// Throws PreconditionError naming the first invalid field.
void validate(const StudyConfig& config);

/// The effective magnitude list.
std::vector<double> study_magnitudes(const StudyConfig& config);

/// One (shape, lambda, magnitude) combination; shapes vary slowest.
struct StudyPoint {
  Index rows = 0;
  Index cols = 0;
  double lambda = 1.0;
  double magnitude = 0.0;
};

std::vector<StudyPoint> study_points(const StudyConfig& config);

/// One sample at one point. Quantities that the comparison does not
/// produce are NaN.
struct StudyRow {
  std::size_t point = 0;
  int sample = 0;
  bool excluded = false;  ///< a Sinkhorn run failed to converge or was rejected

  double ci_sk = 0.0;
  double ci_onestep = 0.0;
  double ci_sk_perturbed = 0.0;
  double ci_onestep_perturbed = 0.0;
  double l1_sk_dev = 0.0;  ///< teacher conditionals before vs after
  double l1_onestep_dev = 0.0;

  double err_stale = 0.0;  ///< l1 to the perturbed limit
  double err_linear = 0.0;
  double err_onestep = 0.0;
  double clamp_mass = 0.0;
};

struct Moments {
  double mean = 0.0;
  double stdev = 0.0;  ///< sample standard deviation; 0 for fewer than 2 values
};

struct PointSummary {
  StudyPoint point;
  int recorded = 0;
  int excluded = 0;
  /// Keyed by column name; only the quantities the comparison produces.
  std::map<std::string, Moments> metrics;
  /// Share of recorded samples with ci_sk_perturbed >= ci_onestep_perturbed
  /// (NaN for the linear-approximation study).
  double win_rate = 0.0;
};

struct StudyRecord {
  StudyConfig config;
  std::vector<StudyPoint> points;
  std::vector<StudyRow> rows;  ///< point-major, then sample
  std::vector<PointSummary> summary;
};

/// Aggregates over the non-excluded rows of each point, in sample order.
std::vector<PointSummary> summarize(const std::vector<StudyPoint>& points,
                                    const std::vector<StudyRow>& rows, int samples,
                                    Comparison comparison);

/// Worker count when none is given: EOTCOMM_THREADS if set, otherwise the
/// hardware concurrency.
int default_thread_count();

/// CI of the teacher and learner plans when one of them plans on a
/// perturbed copy of the ground (config.perturbed_agent), for Sinkhorn
/// plans and for the one-step approximation.
/// `threads` = 0 picks default_thread_count(); it never changes the rows.
StudyRecord run_perturbation_study(const StudyConfig& config, int threads = 0);

/// The same measurements over config.lambdas.
StudyRecord run_lambda_sweep(const StudyConfig& config, int threads = 0);

/// Error of the stale plan, the first-order estimate and a warm-started
/// one-step rescaling against the limit of the perturbed ground. Target
/// kMatrix perturbs M; kPriorData (kPriorHyp) moves magnitude * r_0
/// (c_0) of mass from the second row (column) to the first.
StudyRecord run_linear_approx_study(const StudyConfig& config, int threads = 0);

/// Dispatches on config.comparison.
StudyRecord run_study(const StudyConfig& config, int threads = 0);

std::string study_config_to_json(const StudyConfig& config);
/// Throws PreconditionError on unknown keys, wrong types, a schema other
/// than 1, or an invalid configuration.
StudyConfig study_config_from_json(const std::string& text);

/// One line "# <config json>", a header, then one line per row.
std::string study_csv(const StudyRecord& record);
std::string study_summary_json(const StudyRecord& record);

/// Shortest decimal that reads back to the same double.
std::string format_number(double x);

// ---------------------------------------------------------------------------
// Fixed scenarios

/// Binomial(3, p) over {0, 1, 2, 3}.
MarginalVector binomial_prior(double base_rate);

struct NumeralReport {
  NonnegMatrix consistency;  ///< statement k is true of every state >= k
  Plan eot_teacher;
  Plan eot_learner;
  double eot_ci = 0.0;
  Plan onestep_teacher;
  Plan onestep_learner;
  double onestep_ci = 0.0;
};

struct QuantifierModel {
  double base_rate = 0.0;
  double lambda = 1.0;
  MarginalVector prior;
  Plan learner;  ///< P(state | utterance)
  Plan literal;  ///< rows of M weighted by the prior
  /// P(3 | "some") under the model is below the literal value.
  bool some_implies_not_all = false;
};

struct QuantifierReport {
  NonnegMatrix consistency;  ///< rows none, some, all; columns 0..3 red
  std::vector<std::string> utterances;
  QuantifierModel onestep;
  QuantifierModel eot;
};

struct AppleReport {
  QuantifierReport quantifier;
  NumeralReport numeral;
};

AppleReport apple_scenarios();

struct SensitivityCase {
  double lambda = 1.0;
  Plan teacher;
  Plan learner;
  double ci = 0.0;
};

/// A matrix with two leading diagonals and two enhancements of it that
/// pick different leaders, scaled to unit marginals at growing lambda.
struct DivergentLimits {
  NonnegMatrix base;
  NonnegMatrix raised;   ///< (0,0) raised by epsilon
  NonnegMatrix lowered;  ///< (0,0) lowered by epsilon
  double epsilon = 0.0;
  std::vector<double> lambdas;
  std::vector<NonnegMatrix> raised_limits;
  std::vector<NonnegMatrix> lowered_limits;
  std::vector<double> separation;  ///< linf distance between the two limits
};

struct AppendixCReport {
  NonnegMatrix teacher_matrix;
  NonnegMatrix learner_matrix;  ///< the teacher's plus a 0.1 entry
  std::vector<SensitivityCase> cases;
  Permutation teacher_leader;
  Permutation learner_leader;
  bool leader_mismatch = false;
  DivergentLimits divergent;
};

AppendixCReport appendix_c_examples();

}  // namespace eot
