#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <set>
#include <sstream>

#include "eot/error.hpp"
#include "eot/experiments.hpp"
#include "oracles.hpp"

namespace eot {
namespace {

using testing::plain_ci;
using testing::plain_sinkhorn;

Matrix col_normalized(const Matrix& m) {
  return m * m.colwise().sum().cwiseInverse().transpose().asDiagonal();
}

Matrix row_normalized(const Matrix& m) {
  return m.rowwise().sum().cwiseInverse().asDiagonal() * m;
}

const PointSummary& at(const StudyRecord& record, double lambda, double magnitude, Index cols = -1) {
  for (const PointSummary& s : record.summary) {
    if (s.point.lambda == lambda && s.point.magnitude == magnitude &&
        (cols < 0 || s.point.cols == cols)) {
      return s;
    }
  }
  throw std::logic_error("no such point");
}

double mean(const PointSummary& s, const char* name) { return s.metrics.at(name).mean; }

// ---------------------------------------------------------------------------
// Sampling

TEST(Dirichlet, SimplexAndShape) {
  Stream stream = sample_stream(1, 0, 7, 9);
  const NonnegMatrix flat = sample_dirichlet_matrix(7, 9, 0.3, DirichletMode::kFlat, stream);
  EXPECT_EQ(flat.rows(), 7);
  EXPECT_EQ(flat.cols(), 9);
  EXPECT_NEAR(flat.mass(), 1.0, 1e-12);

  const NonnegMatrix cols = sample_dirichlet_matrix(50, 13, 1.0, DirichletMode::kPerColumn, stream);
  for (Index j = 0; j < cols.cols(); ++j) EXPECT_NEAR(cols.col_sums()[j], 1.0, 1e-12);
}

TEST(Dirichlet, MomentsMatchTheDistribution) {
  // E[x_i] = 1/n, Var[x_i] = (n - 1) / (n^2 (n alpha + 1)).
  const Index n = 4;
  const double alpha = 0.5;
  const int draws = 40000;
  Stream stream = sample_stream(3, 0, 1, 1);
  double sum = 0.0;
  double sq = 0.0;
  for (int k = 0; k < draws; ++k) {
    const double x = sample_dirichlet(n, alpha, stream)[2];
    sum += x;
    sq += x * x;
  }
  const double m = sum / draws;
  const double var = sq / draws - m * m;
  const double expected_var = (n - 1.0) / (n * n * (n * alpha + 1.0));
  EXPECT_NEAR(m, 0.25, 5.0 * std::sqrt(expected_var / draws));
  EXPECT_NEAR(var, expected_var, 0.05 * expected_var);
}

TEST(Dirichlet, LargeAlphaConcentratesNearUniform) {
  Stream stream = sample_stream(5, 0, 10, 10);
  const NonnegMatrix m = sample_dirichlet_matrix(10, 10, 1e6, DirichletMode::kFlat, stream);
  EXPECT_LT((m.entries().array() - 0.01).abs().maxCoeff(), 1e-4);
}

TEST(Dirichlet, RejectsNonPositiveAlpha) {
  Stream stream = sample_stream(0, 0, 1, 1);
  EXPECT_THROW(sample_dirichlet(3, 0.0, stream), PreconditionError);
}

TEST(Streams, ReproducibleAndDistinct) {
  Stream a = sample_stream(42, 7, 10, 20);
  Stream b = sample_stream(42, 7, 10, 20);
  const NonnegMatrix ma = sample_dirichlet_matrix(10, 20, 0.1, DirichletMode::kFlat, a);
  const NonnegMatrix mb = sample_dirichlet_matrix(10, 20, 0.1, DirichletMode::kFlat, b);
  EXPECT_EQ(ma.entries(), mb.entries());

  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed : {0ULL, 1ULL, 1ULL << 32}) {
    for (std::uint64_t sample : {0ULL, 1ULL, 1ULL << 32}) {
      for (Index cols : {10, 11}) firsts.insert(sample_stream(seed, sample, 10, cols)());
    }
  }
  EXPECT_EQ(firsts.size(), 18u);
}

// ---------------------------------------------------------------------------
// Perturbation

TEST(Perturb, CountsEntries) {
  EXPECT_EQ(perturbed_count(10000, 0.03), 300);
  EXPECT_EQ(perturbed_count(100, 0.07), 7);
  EXPECT_EQ(perturbed_count(48, 0.2), 10);
  EXPECT_EQ(perturbed_count(5, 1e-6), 1);
  EXPECT_EQ(perturbed_count(5, 1.0), 5);
  EXPECT_THROW(perturbed_count(5, 0.0), PreconditionError);
  EXPECT_THROW(perturbed_count(5, 1.5), PreconditionError);
}

TEST(Perturb, RaisesExactlyTheChosenEntries) {
  Stream stream = sample_stream(9, 0, 100, 100);
  const NonnegMatrix m = sample_dirichlet_matrix(100, 100, 0.1, DirichletMode::kFlat, stream);
  const Matrix before = m.entries();
  const NonnegMatrix p = perturb(m, {0.03, 0.5, PerturbTarget::kMatrix}, stream);
  EXPECT_EQ(m.entries(), before);

  const Matrix diff = p.entries() - m.entries();
  EXPECT_EQ((diff.array() != 0.0).count(), 300);
  const double bump = 0.5 * m.max_entry();
  for (Index i = 0; i < 100; ++i) {
    for (Index j = 0; j < 100; ++j) {
      if (diff(i, j) != 0.0) EXPECT_NEAR(diff(i, j), bump, 1e-15);
    }
  }
}

TEST(Perturb, EdgeMagnitudes) {
  Stream stream = sample_stream(0, 0, 3, 4);
  const NonnegMatrix m = NonnegMatrix::constant(3, 4, 2.0);
  EXPECT_EQ(perturb(m, {0.5, 0.0, PerturbTarget::kMatrix}, stream).entries(), m.entries());
  const NonnegMatrix all = perturb(m, {1.0, 0.25, PerturbTarget::kMatrix}, stream);
  EXPECT_TRUE(all.entries().isApprox(Matrix::Constant(3, 4, 2.5)));
}

TEST(Perturb, PositionsAreDistinctAndSorted) {
  Stream stream = sample_stream(4, 4, 4, 4);
  const std::vector<Index> pos = perturbation_positions(1000, 0.25, stream);
  ASSERT_EQ(pos.size(), 250u);
  for (std::size_t k = 1; k < pos.size(); ++k) EXPECT_LT(pos[k - 1], pos[k]);
  EXPECT_GE(pos.front(), 0);
  EXPECT_LT(pos.back(), 1000);
}

TEST(Perturb, PriorKeepsItsMass) {
  const MarginalVector prior{0.1, 0.2, 0.3, 0.4};
  const MarginalVector moved = apply_perturbation(prior, {0, 2}, 0.5);
  EXPECT_NEAR(moved.mass(), 1.0, 1e-15);
  // (0.1 + 0.2, 0.2, 0.3 + 0.2, 0.4) / 1.4
  EXPECT_NEAR(moved[0], 0.3 / 1.4, 1e-15);
  EXPECT_NEAR(moved[2], 0.5 / 1.4, 1e-15);
  EXPECT_EQ(apply_perturbation(prior, {0, 2}, 0.0).values(), prior.values());
}

// ---------------------------------------------------------------------------
// Configuration

TEST(StudyConfig, Validation) {
  StudyConfig c;
  EXPECT_NO_THROW(validate(c));
  c.samples = 0;
  EXPECT_THROW(validate(c), PreconditionError);
  c = StudyConfig{};
  c.dirichlet_alpha_M = 0.0;
  EXPECT_THROW(validate(c), PreconditionError);
  c = StudyConfig{};
  c.spec.fraction = 0.0;
  EXPECT_THROW(validate(c), PreconditionError);
  c = StudyConfig{};
  c.lambdas = {};
  EXPECT_THROW(validate(c), PreconditionError);
  c = StudyConfig{};
  c.magnitudes = {0.0, -0.1};
  EXPECT_THROW(validate(c), PreconditionError);
  c = StudyConfig::linear_approx_defaults();
  c.spec.target = PerturbTarget::kPriorData;
  c.spec.magnitude = 1.0;
  EXPECT_THROW(validate(c), PreconditionError);
}

TEST(StudyConfig, PointsVaryShapesSlowest) {
  StudyConfig c;
  c.shapes = {{3, 3}, {4, 5}};
  c.lambdas = {1.0, 2.0};
  c.magnitudes = {0.0, 0.5, 1.0};
  const std::vector<StudyPoint> points = study_points(c);
  ASSERT_EQ(points.size(), 12u);
  EXPECT_EQ(points[0].cols, 3);
  EXPECT_EQ(points[6].cols, 5);
  EXPECT_EQ(points[4].lambda, 2.0);
  EXPECT_EQ(points[4].magnitude, 0.5);
}

TEST(StudyConfig, JsonRoundTrip) {
  StudyConfig c = StudyConfig::lambda_sweep_defaults(1.0);
  c.seed = (1ULL << 63) + 5;
  c.samples = 17;
  c.perturbed_agent = Agent::kTeacher;
  const std::string text = study_config_to_json(c);
  const StudyConfig back = study_config_from_json(text);
  EXPECT_EQ(study_config_to_json(back), text);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.comparison, Comparison::kLambdaSweep);
  EXPECT_EQ(back.perturbed_agent, Agent::kTeacher);
}

TEST(StudyConfig, PresetsFillOmittedKeys) {
  const StudyConfig c =
      study_config_from_json(R"({"schema": 1, "comparison": "linear_approx", "samples": 5})");
  EXPECT_EQ(c.samples, 5);
  EXPECT_EQ(c.shapes.size(), 7u);
  EXPECT_EQ(c.dirichlet_alpha_M, 1.0);
}

TEST(StudyConfig, JsonErrors) {
  EXPECT_THROW(study_config_from_json(R"({"samples": 5})"), PreconditionError);
  EXPECT_THROW(study_config_from_json(R"({"schema": 2})"), PreconditionError);
  try {
    study_config_from_json(R"({"schema": 1, "bogus": 2})");
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  try {
    study_config_from_json("{\n  \"schema\": 1,\n  \"samples\": ]\n}");
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(study_config_from_json(R"({"schema": 1, "lambdas": "one"})"), PreconditionError);
  EXPECT_THROW(study_config_from_json(R"({"schema": 1, "perturbation": {"target": "x"}})"),
               PreconditionError);
}

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(format_number(std::nan("")), "nan");
  std::mt19937_64 rng(3);
  for (int k = 0; k < 2000; ++k) {
    const double x = std::ldexp(static_cast<double>(rng() >> 11), -53) *
                     std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    EXPECT_EQ(std::strtod(format_number(x).c_str(), nullptr), x);
  }
}

// ---------------------------------------------------------------------------
// Perturbation study

StudyConfig small_study() {
  StudyConfig c;
  c.shapes = {{8, 6}};
  c.dirichlet_alpha_M = 1.0;
  c.dirichlet_alpha_prior = 2.0;
  c.lambdas = {1.0, 2.0};
  c.magnitudes = {0.0, 0.7};
  c.spec.fraction = 0.2;
  c.samples = 4;
  c.seed = 11;
  return c;
}

TEST(PerturbationStudy, RowsMatchAnIndependentComputation) {
  const StudyConfig c = small_study();
  const StudyRecord record = run_perturbation_study(c, 1);
  ASSERT_EQ(record.rows.size(), 4u * 4u);

  const Vector r = Vector::Constant(8, 1.0 / 8.0);
  for (int s = 0; s < c.samples; ++s) {
    Stream stream = sample_stream(c.seed, s, 8, 6);
    const NonnegMatrix m = sample_dirichlet_matrix(8, 6, 1.0, DirichletMode::kFlat, stream);
    const Vector prior = sample_dirichlet(6, 2.0, stream);
    const std::vector<Index> pos = perturbation_positions(48, 0.2, stream);
    for (std::size_t li = 0; li < 2; ++li) {
      const double lambda = c.lambdas[li];
      auto plans = [&](const Matrix& ground) {
        const Matrix p = plain_sinkhorn(ground.array().pow(lambda).matrix(), r, prior);
        const Matrix s1 = col_normalized(row_normalized(ground).array().pow(lambda).matrix());
        const Matrix l1 = row_normalized(s1 * prior.asDiagonal());
        return std::array<Matrix, 4>{col_normalized(p), row_normalized(p), s1, l1};
      };
      const auto base = plans(m.entries());
      const auto moved = plans(apply_perturbation(m, pos, 0.7).entries());
      const StudyRow& flat = record.rows[(li * 2 + 0) * 4 + s];
      const StudyRow& bumped = record.rows[(li * 2 + 1) * 4 + s];
      EXPECT_FALSE(flat.excluded);
      EXPECT_NEAR(flat.ci_sk, plain_ci(base[0], base[1]), 1e-9);
      EXPECT_NEAR(flat.ci_onestep, plain_ci(base[2], base[3]), 1e-12);
      EXPECT_NEAR(bumped.ci_sk_perturbed, plain_ci(base[0], moved[1]), 1e-9);
      EXPECT_NEAR(bumped.ci_onestep_perturbed, plain_ci(base[2], moved[3]), 1e-12);
      EXPECT_NEAR(bumped.l1_sk_dev, (base[0] - moved[0]).cwiseAbs().sum(), 1e-8);
      EXPECT_NEAR(bumped.l1_onestep_dev, (base[2] - moved[2]).cwiseAbs().sum(), 1e-12);
      EXPECT_TRUE(std::isnan(bumped.err_linear));
    }
  }
}

TEST(PerturbationStudy, TeacherSidePerturbation) {
  StudyConfig c = small_study();
  c.perturbed_agent = Agent::kTeacher;
  const StudyRecord record = run_perturbation_study(c, 1);
  const Vector r = Vector::Constant(8, 1.0 / 8.0);
  Stream stream = sample_stream(c.seed, 0, 8, 6);
  const NonnegMatrix m = sample_dirichlet_matrix(8, 6, 1.0, DirichletMode::kFlat, stream);
  const Vector prior = sample_dirichlet(6, 2.0, stream);
  const std::vector<Index> pos = perturbation_positions(48, 0.2, stream);
  const Matrix p = plain_sinkhorn(m.entries(), r, prior);
  const Matrix pp = plain_sinkhorn(apply_perturbation(m, pos, 0.7).entries(), r, prior);
  EXPECT_NEAR(record.rows[1 * 4].ci_sk_perturbed, plain_ci(col_normalized(pp), row_normalized(p)),
              1e-9);
}

TEST(PerturbationStudy, ZeroMagnitudeLeavesPlansUntouched) {
  const StudyRecord record = run_perturbation_study(small_study(), 1);
  for (const StudyRow& row : record.rows) {
    if (record.points[row.point].magnitude != 0.0) continue;
    EXPECT_EQ(row.ci_sk, row.ci_sk_perturbed);
    EXPECT_EQ(row.ci_onestep, row.ci_onestep_perturbed);
    EXPECT_EQ(row.l1_sk_dev, 0.0);
    EXPECT_EQ(row.l1_onestep_dev, 0.0);
  }
}

TEST(PerturbationStudy, PriorTargets) {
  StudyConfig c = small_study();
  for (PerturbTarget t : {PerturbTarget::kPriorHyp, PerturbTarget::kPriorData}) {
    c.spec.target = t;
    const StudyRecord record = run_perturbation_study(c, 1);
    for (const StudyRow& row : record.rows) {
      ASSERT_FALSE(row.excluded);
      if (record.points[row.point].magnitude == 0.0) {
        EXPECT_EQ(row.ci_sk, row.ci_sk_perturbed);
      } else {
        EXPECT_NE(row.ci_sk, row.ci_sk_perturbed);
      }
    }
  }
}

TEST(PerturbationStudy, SummaryIsRecomputableFromRows) {
  const StudyRecord record = run_perturbation_study(small_study(), 1);
  ASSERT_EQ(record.summary.size(), record.points.size());
  for (std::size_t p = 0; p < record.points.size(); ++p) {
    const PointSummary& s = record.summary[p];
    EXPECT_EQ(s.recorded + s.excluded, 4);
    double sum = 0.0;
    int wins = 0;
    std::vector<double> xs;
    for (int k = 0; k < 4; ++k) {
      const StudyRow& row = record.rows[p * 4 + k];
      sum += row.ci_sk_perturbed;
      xs.push_back(row.ci_sk_perturbed);
      wins += row.ci_sk_perturbed >= row.ci_onestep_perturbed;
    }
    const double m = sum / 4.0;
    double sq = 0.0;
    for (double x : xs) sq += (x - m) * (x - m);
    EXPECT_EQ(s.metrics.at("ci_sk_perturbed").mean, m);
    EXPECT_DOUBLE_EQ(s.metrics.at("ci_sk_perturbed").stdev, std::sqrt(sq / 3.0));
    EXPECT_EQ(s.win_rate, wins / 4.0);
  }
}

TEST(PerturbationStudy, ThreadCountDoesNotChangeOutput) {
  StudyConfig c = small_study();
  c.shapes = {{8, 6}, {5, 5}};
  c.samples = 9;
  const StudyRecord one = run_perturbation_study(c, 1);
  const StudyRecord four = run_perturbation_study(c, 4);
  EXPECT_EQ(study_csv(one), study_csv(four));
  EXPECT_EQ(study_summary_json(one), study_summary_json(four));
}

TEST(PerturbationStudy, CsvLayout) {
  const StudyRecord record = run_perturbation_study(small_study(), 1);
  const std::string csv = study_csv(record);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# {", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line,
            "point,sample,rows,cols,lambda,magnitude,seed,excluded,ci_sk,ci_onestep,"
            "ci_sk_perturbed,ci_onestep_perturbed,l1_sk_dev,l1_onestep_dev");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 16);
}

TEST(PerturbationStudy, WinRateGrowsWithDimension) {
  StudyConfig c;
  c.shapes = {{25, 25}, {50, 50}, {100, 100}};
  c.spec.magnitude = 1.0;
  c.samples = 300;
  c.seed = 5;
  const StudyRecord record = run_perturbation_study(c);
  double last = -1.0;
  for (const PointSummary& s : record.summary) {
    EXPECT_EQ(s.excluded, 0);
    EXPECT_GT(s.win_rate, last);
    last = s.win_rate;
    EXPECT_LT(mean(s, "l1_sk_dev"), mean(s, "l1_onestep_dev"));
  }
}

TEST(PerturbationStudy, TeacherSideGapWidensWithMagnitude) {
  StudyConfig c;
  c.perturbed_agent = Agent::kTeacher;
  c.magnitudes = {0.0, 0.4, 1.0};
  c.samples = 150;
  c.seed = 8;
  const StudyRecord record = run_perturbation_study(c);
  auto gap = [&](double eps) {
    const PointSummary& s = at(record, 1.0, eps);
    return mean(s, "ci_sk_perturbed") - mean(s, "ci_onestep_perturbed");
  };
  EXPECT_LT(gap(0.0), gap(0.4));
  EXPECT_LT(gap(0.4), gap(1.0));
}

// ---------------------------------------------------------------------------
// Lambda sweep

TEST(LambdaSweep, RobustnessFallsWithLambda) {
  std::map<double, double> retained_at_20;
  for (double alpha : {10.0, 1.0}) {
    StudyConfig c = StudyConfig::lambda_sweep_defaults(alpha);
    c.lambdas = {0.1, 1.0, 20.0};
    c.samples = 150;
    c.seed = 2;
    const StudyRecord record = run_lambda_sweep(c);
    auto gap = [&](double lambda) {
      const PointSummary& s = at(record, lambda, 0.3);
      return mean(s, "ci_sk") - mean(s, "ci_sk_perturbed");
    };
    EXPECT_GT(gap(20.0), gap(1.0));
    // Near the independent coupling, whose CI is 1/|H|.
    EXPECT_NEAR(mean(at(record, 0.1, 0.3), "ci_sk"), 1.0 / 50.0, 2e-3);
    EXPECT_NEAR(mean(at(record, 0.1, 0.3), "ci_sk_perturbed"), 1.0 / 50.0, 2e-3);
    const PointSummary& s20 = at(record, 20.0, 0.3);
    EXPECT_EQ(s20.excluded, 0);
    retained_at_20[alpha] = mean(s20, "ci_sk_perturbed") / mean(s20, "ci_sk");
  }
  EXPECT_LT(retained_at_20[10.0], retained_at_20[1.0]);
}

// ---------------------------------------------------------------------------
// Linear approximation

TEST(LinearApproxStudy, ZeroPerturbationHasNoError) {
  StudyConfig c = StudyConfig::linear_approx_defaults();
  c.shapes = {{50, 10}};
  c.magnitudes = {0.0};
  c.samples = 5;
  const StudyRecord record = run_linear_approx_study(c, 1);
  for (const StudyRow& row : record.rows) {
    EXPECT_FALSE(row.excluded);
    EXPECT_EQ(row.err_stale, 0.0);
    EXPECT_LT(row.err_linear, 1e-12);
    EXPECT_LT(row.err_onestep, 1e-8);
    EXPECT_TRUE(std::isnan(row.ci_sk));
  }
}

TEST(LinearApproxStudy, StaleErrorMatchesIndependentLimits) {
  StudyConfig c = StudyConfig::linear_approx_defaults();
  c.shapes = {{50, 10}};
  c.samples = 3;
  c.seed = 4;
  const StudyRecord record = run_linear_approx_study(c, 1);
  const Vector r = Vector::Constant(50, 1.0 / 50.0);
  const Vector cm = Vector::Constant(10, 1.0 / 10.0);
  for (int s = 0; s < 3; ++s) {
    Stream stream = sample_stream(4, s, 50, 10);
    const NonnegMatrix m = sample_dirichlet_matrix(50, 10, 1.0, DirichletMode::kPerColumn, stream);
    const std::vector<Index> pos = perturbation_positions(500, 0.03, stream);
    const Matrix p = plain_sinkhorn(m.entries(), r, cm);
    const Matrix pp = plain_sinkhorn(apply_perturbation(m, pos, 0.5).entries(), r, cm);
    EXPECT_NEAR(record.rows[s].err_stale, (p - pp).cwiseAbs().sum(), 1e-8);
    EXPECT_LT(record.rows[s].err_linear, record.rows[s].err_stale);
  }
}

TEST(LinearApproxStudy, FirstOrderBeatsTheStalePlan) {
  for (PerturbTarget target : {PerturbTarget::kMatrix, PerturbTarget::kPriorData,
                               PerturbTarget::kPriorHyp}) {
    StudyConfig c = StudyConfig::linear_approx_defaults();
    c.shapes = {{50, 10}, {50, 50}};
    c.spec.target = target;
    c.spec.magnitude = target == PerturbTarget::kMatrix ? 0.5 : 0.1;
    c.samples = 60;
    const StudyRecord record = run_linear_approx_study(c);
    for (const PointSummary& s : record.summary) {
      EXPECT_EQ(s.excluded, 0);
      EXPECT_LT(mean(s, "err_linear"), mean(s, "err_stale")) << to_string(target);
      EXPECT_TRUE(std::isnan(s.win_rate));
    }
  }
}

// ---------------------------------------------------------------------------
// Fixed scenarios

TEST(Scenarios, BinomialPrior) {
  const MarginalVector p = binomial_prior(0.3);
  EXPECT_NEAR(p.mass(), 1.0, 1e-15);
  EXPECT_NEAR(p[1], 3 * 0.3 * 0.7 * 0.7, 1e-15);
  EXPECT_THROW(binomial_prior(1.0), PreconditionError);
}

TEST(Scenarios, Numerals) {
  const AppleReport report = apple_scenarios();
  const NumeralReport& n = report.numeral;
  EXPECT_EQ(n.eot_ci, 1.0);
  EXPECT_EQ(n.eot_teacher.matrix().entries(), Matrix::Identity(4, 4));
  EXPECT_EQ(n.eot_learner.matrix().entries(), Matrix::Identity(4, 4));

  // Speaker: column-normalize the row-normalized at-least matrix; listener:
  // row-normalize the speaker; CI averages the products.
  Matrix m = Matrix::Zero(4, 4);
  for (int k = 0; k < 4; ++k)
    for (int h = k; h < 4; ++h) m(k, h) = 1.0;
  const Matrix s1 = col_normalized(row_normalized(m));
  const Matrix l1 = row_normalized(s1);
  EXPECT_NEAR(n.onestep_ci, plain_ci(s1, l1), 1e-15);
  EXPECT_NEAR(n.onestep_ci, 0.5, 0.01);
}

TEST(Scenarios, Quantifiers) {
  const QuantifierReport q = apple_scenarios().quantifier;
  ASSERT_EQ(q.utterances.size(), 3u);

  const MarginalVector c62 = binomial_prior(0.62);
  const double lam = 3.4;
  const double s3 = std::pow(1.0 / 3.0, lam) / (std::pow(1.0 / 3.0, lam) + 1.0);
  const double onestep = c62[3] * s3 / (c62[1] + c62[2] + c62[3] * s3);
  EXPECT_NEAR(q.onestep.learner.matrix()(1, 3), onestep, 1e-12);
  EXPECT_NEAR(q.onestep.literal.matrix()(1, 3), c62[3] / (c62[1] + c62[2] + c62[3]), 1e-12);
  EXPECT_TRUE(q.onestep.some_implies_not_all);

  // The naive teacher says "some" for three red apples half of the time.
  const MarginalVector c82 = binomial_prior(0.82);
  const double eot = 0.5 * c82[3] / (c82[1] + c82[2] + 0.5 * c82[3]);
  EXPECT_NEAR(q.eot.learner.matrix()(1, 3), eot, 1e-9);
  EXPECT_TRUE(q.eot.some_implies_not_all);
  EXPECT_NEAR(q.eot.learner.matrix()(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(q.eot.learner.matrix()(2, 3), 1.0, 1e-15);
}

TEST(Scenarios, SensitivityToASmallEntry) {
  const AppendixCReport report = appendix_c_examples();
  ASSERT_EQ(report.cases.size(), 3u);
  for (const SensitivityCase& k : report.cases) {
    EXPECT_EQ(k.teacher.matrix().entries(), Matrix::Identity(3, 3));
    // Support = identity + a 3-cycle with product ratio 3^-lambda, so the
    // diagonal weight is t / (1 + t) with t = 3^(-lambda / 3).
    const double t = std::pow(3.0, -k.lambda / 3.0);
    EXPECT_NEAR(k.ci, t / (1.0 + t), 1e-9) << k.lambda;
    EXPECT_NEAR(k.ci / (t / (1.0 + t)), 1.0, 1e-5) << k.lambda;
  }
  EXPECT_NEAR(report.cases[0].ci, 0.41, 0.02);
  EXPECT_LT(report.cases[2].ci, 0.05);
  EXPECT_TRUE(report.leader_mismatch);
  EXPECT_EQ(report.teacher_leader, (Permutation{0, 1, 2}));
  EXPECT_EQ(report.learner_leader, (Permutation{1, 2, 0}));
}

TEST(Scenarios, EnhancementsPickDifferentLimits) {
  const DivergentLimits d = appendix_c_examples().divergent;
  ASSERT_EQ(d.separation.size(), d.lambdas.size());
  for (std::size_t k = 0; k < d.lambdas.size(); ++k) {
    // 2 x 2 with unit marginals: diagonal weight a solves a / (1/2 - a) = sqrt(x^lambda).
    auto diag = [&](double x) {
      const double q = std::pow(x, d.lambdas[k] / 2.0);
      return 0.5 * q / (1.0 + q);
    };
    EXPECT_NEAR(d.separation[k], diag(1.02) - diag(0.98), 1e-9);
    if (k > 0) EXPECT_GT(d.separation[k], d.separation[k - 1]);
  }
  EXPECT_GT(d.separation.back(), 0.49);
}

}  // namespace
}  // namespace eot
