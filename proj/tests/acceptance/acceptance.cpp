// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "eot/divergence.hpp"
#include "eot/error.hpp"
#include "eot/experiments.hpp"
#include "eot/gradients.hpp"
#include "eot/metrics.hpp"
#include "eot/planning.hpp"
#include "eot/sinkhorn.hpp"

namespace eot {
namespace {

using testing::random_feasible_plans;
using testing::random_positive;
using testing::random_simplex;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<void(Verdict&)> body;
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

const PointSummary& find_point(const StudyRecord& rec, Index cols, double lambda, double magnitude) {
  for (const PointSummary& s : rec.summary) {
    if (s.point.cols == cols && s.point.lambda == lambda && s.point.magnitude == magnitude) return s;
  }
  throw ContractError("missing study point");
}

double mean_of(const PointSummary& s, const std::string& key) { return s.metrics.at(key).mean; }

// Study records kept for the determinism rerun.
struct StudyRun {
  StudyConfig config;
  std::string csv;
};
std::vector<StudyRun> g_studies;
constexpr int kThreads = 4;

StudyRecord run_kept(const StudyConfig& config) {
  StudyRecord rec = run_study(config, kThreads);
  g_studies.push_back({config, study_csv(rec)});
  return rec;
}

void worked_example(Verdict& v) {
  const NonnegMatrix m{{1.0, 0.5}, {0.25, 1.0}};
  const MarginalVector r{0.375, 0.625};
  const SinkhornResult res = sinkhorn(m, r, r);
  const Matrix expected = (Matrix(2, 2) << 0.25, 0.125, 0.125, 0.5).finished();
  const double err = (res.plan.entries() - expected).cwiseAbs().maxCoeff();
  v.detail << "max deviation " << num(err);
  v.require(err <= 1e-9, "elementwise within 1e-9");
}

void appendix_sensitivity(Verdict& v) {
  const AppendixCReport rep = appendix_c_examples();
  for (const SensitivityCase& k : rep.cases) {
    v.detail << "CI(" << num(k.lambda) << ")=" << num(k.ci) << " ";
    if (k.lambda == 1.0) v.require(std::abs(k.ci - 0.41) <= 0.02, "CI at lambda 1 is 0.41 +- 0.02");
    if (k.lambda == 2.0) v.require(std::abs(k.ci - 0.25) <= 0.02, "CI at lambda 2 is 0.25 +- 0.02");
    if (k.lambda == 40.0) v.require(k.ci < 0.05, "CI at lambda 40 below 0.05");
  }
  const Matrix id = Matrix::Identity(3, 3);
  bool identity = true;
  for (const SensitivityCase& k : rep.cases) identity &= k.teacher.matrix().entries() == id;
  const auto ground = CommonGround::with_uniform_priors(rep.teacher_matrix);
  for (double lambda : {0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 40.0, 100.0}) {
    identity &= teaching_plan(ground, lambda).conditional.matrix().entries() == id;
  }
  v.detail << "teacher plan identity at every lambda: " << (identity ? "yes" : "no");
  v.require(identity, "teacher plan equals I3 exactly");
}

void apple(Verdict& v) {
  const AppleReport a = apple_scenarios();
  v.detail << "numeral EOT CI " << num(a.numeral.eot_ci) << ", one-step CI " << num(a.numeral.onestep_ci);
  v.require(std::abs(a.numeral.eot_ci - 1.0) <= 1e-9, "numeral EOT CI is 1");
  v.require(std::abs(a.numeral.onestep_ci - 0.5) <= 0.01, "numeral one-step CI is 0.5 +- 0.01");
  for (const QuantifierModel* q : {&a.quantifier.onestep, &a.quantifier.eot}) {
    const double model = q->learner.matrix()(1, 3);
    const double literal = q->literal.matrix()(1, 3);
    v.detail << "; P(3|some) " << num(model) << " vs literal " << num(literal);
    v.require(model < literal, "some implies not all");
  }
}

void gradients(Verdict& v) {
  const Index shapes[3][2] = {{2, 2}, {5, 7}, {10, 10}};
  const double lambdas[3] = {0.5, 1.0, 3.0};
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Index n = shapes[k % 3][0];
    const Index m = shapes[k % 3][1];
    const double lambda = lambdas[(k / 3) % 3];
    const NonnegMatrix mat(random_positive(n, m, rng, 0.1, 1.0));
    const MarginalVector r(random_simplex(n, rng));
    const MarginalVector c(random_simplex(m, rng));
    const GradientBundle g = compute_gradients(mat, r, c, lambda, 1e-12);
    for (FdTarget t : {FdTarget::kR, FdTarget::kC, FdTarget::kM}) {
      const FdGradient fd = finite_difference_grad(mat, r, c, lambda, t, {.step = 1e-6, .tol = 1e-14});
      const auto& analytic = t == FdTarget::kR ? g.wrt_r : t == FdTarget::kC ? g.wrt_c : g.wrt_M.slices;
      worst = std::max(worst, relative_error(analytic, fd.slices));
    }
  }
  v.detail << "50 instances (step 1e-6, probe tolerance 1e-14), worst relative error " << num(worst);
  v.require(worst < 1e-5, "relative error below 1e-5");
}

void kl_and_rate_distortion(Verdict& v) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lam(0.5, 3.0);
  int violations = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const Matrix cost = random_positive(4, 4, rng, 0.0, 2.0);
    const Vector r = random_simplex(4, rng);
    const Vector c = random_simplex(4, rng);
    const double lambda = lam(rng);
    const SinkhornResult sk = eot_plan({cost, Vector::Zero(4)}, MarginalVector(r), MarginalVector(c),
                                       lambda, {.tol = 1e-13});
    const NonnegMatrix kernel((-lambda * cost).array().exp().matrix());
    const double kl_best = kl_divergence(sk.plan, kernel);
    const double rd_best = rd_objective(sk.plan, cost, lambda);
    for (const Matrix& q : random_feasible_plans({sk.plan.entries(), r * c.transpose()}, r, c, 1000, rng)) {
      const NonnegMatrix p(q);
      if (kl_divergence(p, kernel) < kl_best - 1e-12) ++violations;
      if (rd_objective(p, cost, lambda) < rd_best - 1e-12) ++violations;
    }
  }
  v.detail << "20 instances x 1000 plans, violations " << violations;
  v.require(violations == 0, "no feasible plan beats the Sinkhorn plan");
}

void lambda_dynamics(Verdict& v) {
  std::mt19937_64 rng(6);
  const MarginalVector ones = MarginalVector::uniform(5, 5.0);
  double worst_small = 0.0;
  for (int k = 0; k < 20; ++k) {
    const NonnegMatrix m(random_positive(5, 5, rng));
    const SinkhornResult sk = sinkhorn(m, ones, ones, 0.001);
    worst_small = std::max(worst_small, linf_distance(sk.plan, NonnegMatrix::independent(ones, ones)));
  }
  v.detail << "lambda 0.001: worst linf " << num(worst_small);
  v.require(worst_small < 1e-3, "near the independent coupling");

  int checked = 0;
  double worst_off = 0.0;
  for (int trial = 0; trial < 5000 && checked < 20; ++trial) {
    const NonnegMatrix m(random_positive(5, 5, rng, 0.1, 1.0));
    const DiagonalReport rep = diagonal_report(m);
    std::vector<double> sorted = rep.products;
    std::sort(sorted.rbegin(), sorted.rend());
    if (rep.leaders.size() != 1 || sorted[1] > 0.5 * sorted[0]) continue;
    ++checked;
    const SinkhornResult sk = sinkhorn(m, ones, ones, 40.0, {.domain = Domain::kLog});
    const Permutation& lead = rep.permutations[rep.leaders[0]];
    double on = 0.0;
    for (Index i = 0; i < 5; ++i) on += sk.plan(i, lead[static_cast<std::size_t>(i)]);
    worst_off = std::max(worst_off, sk.plan.mass() - on);
    v.require(sk.converged, "log-domain scaling converged");
  }
  v.detail << "; lambda 40 on " << checked << " unique-leader instances: worst off-leader mass "
           << num(worst_off);
  v.require(checked == 20, "enough unique-leader instances");
  v.require(worst_off < 0.01, "off-leader mass below 0.01");
}

void cooperative_equivalence(Verdict& v) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Index n = 2 + k % 5;
    const Index m = 2 + (k / 5) % 5;
    const CommonGround g(NonnegMatrix(random_positive(n, m, rng)), MarginalVector(random_simplex(n, rng)),
                         MarginalVector(random_simplex(m, rng)));
    const CooperativeInferenceResult ci = cooperative_inference(g, 1e-12, 100000);
    v.require(ci.converged, "fixed-point iteration converged");
    const AgentPlan t = teaching_plan(g, 1.0, std::nullopt, {.tol = 1e-12});
    const AgentPlan l = learning_plan(g, 1.0, std::nullopt, {.tol = 1e-12});
    worst = std::max({worst,
                      (ci.teacher.matrix().entries() - t.conditional.matrix().entries()).cwiseAbs().maxCoeff(),
                      (ci.learner.matrix().entries() - l.conditional.matrix().entries()).cwiseAbs().maxCoeff()});
  }
  v.detail << "100 grounds, worst deviation " << num(worst);
  v.require(worst <= 1e-8, "within 1e-8");
}

void cross_ratios(Verdict& v) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dim(2, 6);
  const double lambdas[3] = {0.5, 1.0, 2.0};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Index n = dim(rng);
    const Index m = dim(rng);
    const double lambda = lambdas[k % 3];
    const Matrix a = random_positive(n, m, rng);
    const SinkhornResult sk = sinkhorn(NonnegMatrix(a), MarginalVector(random_simplex(n, rng)),
                                       MarginalVector(random_simplex(m, rng)), lambda, {.tol = 1e-12});
    const Matrix k0 = a.array().pow(lambda).matrix();
    const Matrix& p = sk.plan.entries();
    for (Index i = 0; i < n; ++i)
      for (Index i2 = i + 1; i2 < n; ++i2)
        for (Index j = 0; j < m; ++j)
          for (Index j2 = j + 1; j2 < m; ++j2) {
            const double before = k0(i, j) * k0(i2, j2) / (k0(i, j2) * k0(i2, j));
            const double after = p(i, j) * p(i2, j2) / (p(i, j2) * p(i2, j));
            worst = std::max(worst, std::abs(after - before) / before);
          }
  }
  v.detail << "100 instances, worst relative change " << num(worst);
  v.require(worst <= 1e-6, "within 1e-6 relative");
}

void continuity(Verdict& v) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> dim(3, 6);
  std::bernoulli_distribution keep(0.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int monotone = 0;
  double largest_final = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Index n = dim(rng);
    Matrix a = random_positive(n, n, rng, 0.1, 1.0);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (i != j && !keep(rng)) a(i, j) = 0.0;
    Matrix noise(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) noise(i, j) = u(rng);
    const MarginalVector r = MarginalVector::uniform(n);
    const SinkhornResult base = sinkhorn(NonnegMatrix(a), r, r, 1.0, {.tol = 1e-13});
    v.require(base.converged, "sparse limit converged");
    std::vector<double> d;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
      const SinkhornResult near =
          sinkhorn(NonnegMatrix(a + eps * noise), r, r, 1.0, {.tol = 1e-13, .max_iter = 1'000'000});
      v.require(near.converged, "perturbed limit converged");
      d.push_back(linf_distance(near.plan, base.plan));
    }
    if (d[0] > d[1] && d[1] > d[2]) ++monotone;
    largest_final = std::max(largest_final, d[2]);
  }
  v.detail << monotone << "/100 monotone, largest distance at 1e-4: " << num(largest_final);
  v.require(monotone == 100, "monotone decrease on every instance");
}

void perturbation_trends(Verdict& v) {
  StudyConfig a = StudyConfig::perturbation_defaults();
  a.samples = 1000;
  a.seed = 2024;
  a.magnitudes = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const StudyRecord ra = run_kept(a);
  std::vector<double> gaps;
  v.detail << "(a) gaps:";
  for (double mag : a.magnitudes) {
    const PointSummary& s = find_point(ra, 100, 1.0, mag);
    gaps.push_back(mean_of(s, "ci_sk_perturbed") - mean_of(s, "ci_onestep_perturbed"));
    v.detail << " " << num(gaps.back());
  }
  v.require(std::is_sorted(gaps.begin(), gaps.end()), "(a) gap nondecreasing in magnitude");

  StudyConfig b = StudyConfig::perturbation_defaults();
  b.samples = 1000;
  b.seed = 2025;
  b.shapes = {{25, 25}, {50, 50}, {100, 100}};
  b.magnitudes = {1.0};
  const StudyRecord rb = run_kept(b);
  std::vector<double> wins;
  v.detail << "; (b) win-rates:";
  bool smaller = true;
  std::ostringstream l1;
  for (Index n : {25, 50, 100}) {
    const PointSummary& s = find_point(rb, n, 1.0, 1.0);
    wins.push_back(s.win_rate);
    v.detail << " " << num(s.win_rate);
    const double sk = mean_of(s, "l1_sk_dev");
    const double os = mean_of(s, "l1_onestep_dev");
    l1 << " " << num(sk) << "<" << num(os);
    smaller &= sk < os;
  }
  v.detail << "; (c) L1:" << l1.str();
  v.require(std::is_sorted(wins.begin(), wins.end()), "(b) win-rate nondecreasing in size");
  v.require(smaller, "(c) SK deviation smaller at every size");
}

void lambda_sweep(Verdict& v) {
  for (double alpha : {10.0, 1.0}) {
    StudyConfig cfg = StudyConfig::lambda_sweep_defaults(alpha);
    cfg.samples = 1000;
    cfg.seed = 2026;
    const StudyRecord rec = run_kept(cfg);
    const double mag = study_magnitudes(cfg).front();
    auto gap = [&](double lambda) {
      const PointSummary& s = find_point(rec, 50, lambda, mag);
      return mean_of(s, "ci_sk") - mean_of(s, "ci_sk_perturbed");
    };
    v.detail << "alpha " << num(alpha) << ": gap(1)=" << num(gap(1.0)) << " gap(20)=" << num(gap(20.0)) << "; ";
    v.require(gap(20.0) > gap(1.0), "gap at lambda 20 exceeds gap at lambda 1");
  }
}

void linear_approximation(Verdict& v) {
  StudyConfig cfg = StudyConfig::linear_approx_defaults();
  cfg.shapes = {{50, 10}, {50, 50}, {50, 100}};
  cfg.samples = 1000;
  cfg.seed = 2027;
  const StudyRecord rec = run_kept(cfg);
  for (Index cols : {10, 50, 100}) {
    const PointSummary& s = find_point(rec, cols, 1.0, cfg.spec.magnitude);
    const double lin = mean_of(s, "err_linear");
    const double stale = mean_of(s, "err_stale");
    v.detail << cols << " cols: " << num(lin) << " vs stale " << num(stale) << "; ";
    v.require(lin < stale, "linear error below stale error");
  }
}

void determinism(Verdict& v) {
  int identical = 0;
  for (const StudyRun& run : g_studies) {
    for (int threads : {1, 3}) {
      if (study_csv(run_study(run.config, threads)) == run.csv) ++identical;
    }
  }
  const int total = static_cast<int>(g_studies.size()) * 2;
  v.detail << identical << "/" << total << " reruns byte-identical (threads 1, 3 vs " << kThreads << ")";
  v.require(total > 0 && identical == total, "byte-identical CSV");
}

}  // namespace
}  // namespace eot

int main() {
  using namespace eot;
  const std::vector<Criterion> criteria = {
      {1, "worked Sinkhorn example", 1e-3, worked_example},
      {2, "sensitivity examples", 1.0, appendix_sensitivity},
      {3, "apple scenarios", 1.0, apple},
      {4, "gradients against finite differences", 30.0, gradients},
      {5, "KL and rate-distortion optimality", 10.0, kl_and_rate_distortion},
      {6, "lambda dynamics", 5.0, lambda_dynamics},
      {7, "cooperative inference equivalence", 10.0, cooperative_equivalence},
      {8, "cross-ratio preservation", 5.0, cross_ratios},
      {9, "continuity on sparse patterns", 10.0, continuity},
      {10, "perturbation trends", 600.0, perturbation_trends},
      {11, "robustness across lambda", 300.0, lambda_sweep},
      {12, "linear approximation", 300.0, linear_approximation},
      {13, "determinism across thread counts", 0.0, determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0.0) {
      v.require(seconds < c.budget_seconds, "runtime budget " + num(c.budget_seconds) + " s");
    }
    if (!v.pass) ++failed;
    std::printf("%s criterion %2d  %s: %s (%.3f s)\n", v.pass ? "PASS" : "FAIL", c.id, c.title,
                v.detail.str().c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
