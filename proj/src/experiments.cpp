#include "eot/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "eot/error.hpp"
#include "eot/gradients.hpp"
#include "eot/sinkhorn.hpp"

namespace eot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Json = nlohmann::ordered_json;

std::uint32_t low(std::uint64_t x) { return static_cast<std::uint32_t>(x); }
std::uint32_t high(std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); }

// Runs body(0..n-1) on up to `threads` workers. Which worker takes which
// index is irrelevant to the caller: each index writes its own slots.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void fail(const std::string& what) { throw PreconditionError("study config: " + what); }

Index entry_count(const Shape& shape, PerturbTarget target) {
  switch (target) {
    case PerturbTarget::kMatrix:
      return shape.rows * shape.cols;
    case PerturbTarget::kPriorHyp:
      return shape.cols;
    case PerturbTarget::kPriorData:
      return shape.rows;
  }
  return 0;
}

void mark_failed(StudyRow& row) {
  row.excluded = true;
  row.ci_sk = row.ci_onestep = row.ci_sk_perturbed = row.ci_onestep_perturbed = kNaN;
  row.l1_sk_dev = row.l1_onestep_dev = kNaN;
  row.err_stale = row.err_linear = row.err_onestep = row.clamp_mass = kNaN;
}

void clear_linear(StudyRow& row) {
  row.err_stale = row.err_linear = row.err_onestep = row.clamp_mass = kNaN;
}

void clear_ci(StudyRow& row) {
  row.ci_sk = row.ci_onestep = row.ci_sk_perturbed = row.ci_onestep_perturbed = kNaN;
  row.l1_sk_dev = row.l1_onestep_dev = kNaN;
}

// Runs `measure` and turns library rejections of a sampled instance into
// an excluded row.
template <class Measure>
void guarded(StudyRow& row, Measure&& measure) {
  try {
    measure();
  } catch (const PreconditionError&) {
    mark_failed(row);
  } catch (const ContractError&) {
    mark_failed(row);
  } catch (const SingularSystemError&) {
    mark_failed(row);
  }
}

struct AgentPlans {
  Plan teacher;
  Plan learner;
  Plan onestep_teacher;
  Plan onestep_learner;
  bool converged;
};

AgentPlans agent_plans(const CommonGround& ground, double lambda) {
  const SinkhornResult sk =
      sinkhorn(ground.matrix(), ground.prior_data(), ground.prior_hyp(), lambda);
  Plan t1 = one_step_teacher(ground, lambda);
  Plan l1 = one_step_listener(t1, ground.prior_hyp());
  return {teacher_view(sk.plan, lambda), learner_view(sk.plan, lambda), std::move(t1),
          std::move(l1), sk.converged};
}

struct Layout {
  std::vector<StudyPoint> points;
  std::size_t per_shape = 0;  // points per shape
  std::vector<double> magnitudes;
};

Layout layout(const StudyConfig& config) {
  Layout out;
  out.points = study_points(config);
  out.magnitudes = study_magnitudes(config);
  out.per_shape = config.lambdas.size() * out.magnitudes.size();
  return out;
}

StudyRecord make_record(const StudyConfig& config, Layout lay) {
  StudyRecord record;
  record.config = config;
  record.points = std::move(lay.points);
  record.rows.resize(record.points.size() * static_cast<std::size_t>(config.samples));
  for (std::size_t p = 0; p < record.points.size(); ++p) {
    for (int s = 0; s < config.samples; ++s) {
      StudyRow& row = record.rows[p * config.samples + s];
      row.point = p;
      row.sample = s;
    }
  }
  return record;
}

StudyRecord run_sk_comparison(const StudyConfig& config, int threads) {
  validate(config);
  Layout lay = layout(config);
  const std::vector<double> magnitudes = lay.magnitudes;
  const std::size_t per_shape = lay.per_shape;
  StudyRecord record = make_record(config, std::move(lay));
  const auto samples = static_cast<std::size_t>(config.samples);
  const PerturbTarget target = config.spec.target;

  auto unit = [&](std::size_t u) {
    const std::size_t shape_index = u / samples;
    const std::size_t s = u % samples;
    const Shape shape = config.shapes[shape_index];
    Stream stream = sample_stream(config.seed, s, shape.rows, shape.cols);
    const NonnegMatrix m = sample_dirichlet_matrix(shape.rows, shape.cols, config.dirichlet_alpha_M,
                                                   DirichletMode::kFlat, stream);
    const MarginalVector prior_hyp(sample_dirichlet(shape.cols, config.dirichlet_alpha_prior, stream));
    const MarginalVector prior_data = MarginalVector::uniform(shape.rows);
    const std::vector<Index> positions =
        perturbation_positions(entry_count(shape, target), config.spec.fraction, stream);

    for (std::size_t li = 0; li < config.lambdas.size(); ++li) {
      const double lambda = config.lambdas[li];
      const std::size_t first = shape_index * per_shape + li * magnitudes.size();
      std::optional<AgentPlans> base;
      for (std::size_t mi = 0; mi < magnitudes.size(); ++mi) {
        StudyRow& row = record.rows[(first + mi) * samples + s];
        clear_linear(row);
        guarded(row, [&] {
          if (!base) base = agent_plans(CommonGround(m, prior_data, prior_hyp), lambda);
          const double eps = magnitudes[mi];
          std::optional<AgentPlans> moved;
          if (eps != 0.0) {
            switch (target) {
              case PerturbTarget::kMatrix:
                moved = agent_plans(
                    CommonGround(apply_perturbation(m, positions, eps), prior_data, prior_hyp),
                    lambda);
                break;
              case PerturbTarget::kPriorHyp:
                moved = agent_plans(
                    CommonGround(m, prior_data, apply_perturbation(prior_hyp, positions, eps)),
                    lambda);
                break;
              case PerturbTarget::kPriorData:
                moved = agent_plans(
                    CommonGround(m, apply_perturbation(prior_data, positions, eps), prior_hyp),
                    lambda);
                break;
            }
          }
          const AgentPlans& after = moved ? *moved : *base;
          row.ci_sk = cooperative_index(base->teacher, base->learner);
          row.ci_onestep = cooperative_index(base->onestep_teacher, base->onestep_learner);
          if (config.perturbed_agent == Agent::kLearner) {
            row.ci_sk_perturbed = cooperative_index(base->teacher, after.learner);
            row.ci_onestep_perturbed =
                cooperative_index(base->onestep_teacher, after.onestep_learner);
          } else {
            row.ci_sk_perturbed = cooperative_index(after.teacher, base->learner);
            row.ci_onestep_perturbed =
                cooperative_index(after.onestep_teacher, base->onestep_learner);
          }
          row.l1_sk_dev = l1_distance(base->teacher.matrix(), after.teacher.matrix());
          row.l1_onestep_dev =
              l1_distance(base->onestep_teacher.matrix(), after.onestep_teacher.matrix());
          row.excluded = !base->converged || !after.converged;
        });
      }
    }
  };
  parallel_for(config.shapes.size() * samples, threads > 0 ? threads : default_thread_count(),
               unit);
  record.summary = summarize(record.points, record.rows, config.samples, config.comparison);
  return record;
}

Matrix log_of(const NonnegMatrix& m, double lambda) {
  return (lambda * m.entries().array().log()).matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// Sampling and perturbation

Stream sample_stream(std::uint64_t seed, std::uint64_t sample, Index rows, Index cols) {
  std::seed_seq seq{low(seed),   high(seed),
                    low(sample), high(sample),
                    low(static_cast<std::uint64_t>(rows)), low(static_cast<std::uint64_t>(cols))};
  return Stream(seq);
}

Vector sample_dirichlet(Index n, double alpha, Stream& stream) {
  if (!(alpha > 0.0)) throw PreconditionError("sample_dirichlet: alpha must be > 0");
  if (n < 1) throw PreconditionError("sample_dirichlet: dimension must be >= 1");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Vector v(n);
  double total = 0.0;
  // With tiny alpha every draw can underflow; redraw rather than divide by 0.
  while (!(total > 0.0)) {
    for (Index i = 0; i < n; ++i) v[i] = gamma(stream);
    total = v.sum();
  }
  return v / total;
}

NonnegMatrix sample_dirichlet_matrix(Index rows, Index cols, double alpha, DirichletMode mode,
                                     Stream& stream) {
  Matrix out(rows, cols);
  if (mode == DirichletMode::kFlat) {
    const Vector v = sample_dirichlet(rows * cols, alpha, stream);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) out(i, j) = v[i * cols + j];
    }
  } else {
    for (Index j = 0; j < cols; ++j) out.col(j) = sample_dirichlet(rows, alpha, stream);
  }
  return NonnegMatrix(std::move(out));
}

const char* to_string(PerturbTarget target) {
  switch (target) {
    case PerturbTarget::kMatrix:
      return "matrix";
    case PerturbTarget::kPriorHyp:
      return "prior_hyp";
    case PerturbTarget::kPriorData:
      return "prior_data";
  }
  return "?";
}

Index perturbed_count(Index count, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw PreconditionError("perturbation fraction must lie in (0, 1]");
  }
  const auto k = static_cast<Index>(std::ceil(fraction * static_cast<double>(count) - 1e-9));
  return std::clamp<Index>(k, 1, count);
}

std::vector<Index> perturbation_positions(Index count, double fraction, Stream& stream) {
  const Index k = perturbed_count(count, fraction);
  std::vector<Index> all(static_cast<std::size_t>(count));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(k));
  std::sample(all.begin(), all.end(), std::back_inserter(picked), k, stream);
  return picked;
}

NonnegMatrix apply_perturbation(const NonnegMatrix& m, const std::vector<Index>& positions,
                                double magnitude) {
  if (!(magnitude >= 0.0)) throw PreconditionError("perturbation magnitude must be >= 0");
  Matrix out = m.entries();
  const double bump = magnitude * m.max_entry();
  for (Index p : positions) {
    if (p < 0 || p >= m.rows() * m.cols()) throw PreconditionError("perturbation position out of range");
    out(p / m.cols(), p % m.cols()) += bump;
  }
  return NonnegMatrix(std::move(out));
}

MarginalVector apply_perturbation(const MarginalVector& prior, const std::vector<Index>& positions,
                                  double magnitude) {
  if (!(magnitude >= 0.0)) throw PreconditionError("perturbation magnitude must be >= 0");
  if (magnitude == 0.0) return prior;
  Vector out = prior.values();
  const double bump = magnitude * out.maxCoeff();
  for (Index p : positions) {
    if (p < 0 || p >= prior.size()) throw PreconditionError("perturbation position out of range");
    out[p] += bump;
  }
  return MarginalVector(Vector(out * (prior.mass() / out.sum())));
}

NonnegMatrix perturb(const NonnegMatrix& m, const PerturbationSpec& spec, Stream& stream) {
  return apply_perturbation(m, perturbation_positions(m.rows() * m.cols(), spec.fraction, stream),
                            spec.magnitude);
}

// ---------------------------------------------------------------------------
// Configuration

const char* to_string(Comparison comparison) {
  switch (comparison) {
    case Comparison::kSkVsOnestep:
      return "sk_vs_onestep";
    case Comparison::kLinearApprox:
      return "linear_approx";
    case Comparison::kLambdaSweep:
      return "lambda_sweep";
  }
  return "?";
}

const char* to_string(Agent agent) { return agent == Agent::kLearner ? "learner" : "teacher"; }

StudyConfig StudyConfig::perturbation_defaults() { return StudyConfig{}; }

StudyConfig StudyConfig::lambda_sweep_defaults(double alpha_M) {
  StudyConfig c;
  c.comparison = Comparison::kLambdaSweep;
  c.shapes = {{50, 50}};
  c.dirichlet_alpha_M = alpha_M;
  c.dirichlet_alpha_prior = 10.0;
  c.lambdas = {0.1, 0.5, 1.0, 5.0, 10.0, 20.0, 40.0};
  c.spec = {0.3, 0.3, PerturbTarget::kMatrix};
  return c;
}

StudyConfig StudyConfig::linear_approx_defaults() {
  StudyConfig c;
  c.comparison = Comparison::kLinearApprox;
  c.shapes.clear();
  for (Index cols : {2, 5, 10, 20, 50, 100, 200}) c.shapes.push_back({50, cols});
  c.dirichlet_alpha_M = 1.0;
  c.dirichlet_alpha_prior = 1.0;
  c.lambdas = {1.0};
  c.spec = {0.03, 0.5, PerturbTarget::kMatrix};
  return c;
}

void validate(const StudyConfig& config) {
  if (config.samples < 1) fail("samples must be >= 1");
  if (!(config.dirichlet_alpha_M > 0.0)) fail("dirichlet_alpha_M must be > 0");
  if (!(config.dirichlet_alpha_prior > 0.0)) fail("dirichlet_alpha_prior must be > 0");
  if (config.shapes.empty()) fail("shapes must be nonempty");
  if (config.lambdas.empty()) fail("lambdas must be nonempty");
  for (double l : config.lambdas) {
    if (!(l > 0.0) || !std::isfinite(l)) fail("every lambda must be finite and > 0");
  }
  if (!(config.spec.fraction > 0.0 && config.spec.fraction <= 1.0)) {
    fail("perturbation.fraction must lie in (0, 1]");
  }
  for (double e : study_magnitudes(config)) {
    if (!(e >= 0.0) || !std::isfinite(e)) fail("every magnitude must be finite and >= 0");
  }
  const bool marginal_shift = config.comparison == Comparison::kLinearApprox &&
                              config.spec.target != PerturbTarget::kMatrix;
  for (const Shape& s : config.shapes) {
    if (s.rows < 1 || s.cols < 1) fail("every shape must have rows, cols >= 1");
    if (marginal_shift) {
      const Index n = config.spec.target == PerturbTarget::kPriorData ? s.rows : s.cols;
      if (n < 2) fail("a marginal shift needs at least two entries on the shifted side");
    }
  }
  if (marginal_shift) {
    for (double e : study_magnitudes(config)) {
      if (e >= 1.0) fail("a marginal shift magnitude must be < 1");
    }
  }
}

std::vector<double> study_magnitudes(const StudyConfig& config) {
  if (config.magnitudes.empty()) return {config.spec.magnitude};
  return config.magnitudes;
}

std::vector<StudyPoint> study_points(const StudyConfig& config) {
  std::vector<StudyPoint> points;
  for (const Shape& s : config.shapes) {
    for (double lambda : config.lambdas) {
      for (double eps : study_magnitudes(config)) points.push_back({s.rows, s.cols, lambda, eps});
    }
  }
  return points;
}

int default_thread_count() {
  if (const char* env = std::getenv("EOTCOMM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

struct Column {
  const char* name;
  double StudyRow::*field;
};

constexpr Column kCiColumns[] = {
    {"ci_sk", &StudyRow::ci_sk},
    {"ci_onestep", &StudyRow::ci_onestep},
    {"ci_sk_perturbed", &StudyRow::ci_sk_perturbed},
    {"ci_onestep_perturbed", &StudyRow::ci_onestep_perturbed},
    {"l1_sk_dev", &StudyRow::l1_sk_dev},
    {"l1_onestep_dev", &StudyRow::l1_onestep_dev},
};

constexpr Column kLinearColumns[] = {
    {"err_stale", &StudyRow::err_stale},
    {"err_linear", &StudyRow::err_linear},
    {"err_onestep", &StudyRow::err_onestep},
    {"clamp_mass", &StudyRow::clamp_mass},
};

bool is_linear(Comparison c) { return c == Comparison::kLinearApprox; }

template <class F>
void for_columns(bool linear, F&& f) {
  if (linear) {
    for (const Column& c : kLinearColumns) f(c);
  } else {
    for (const Column& c : kCiColumns) f(c);
  }
}

Moments moments(const std::vector<double>& xs) {
  Moments out;
  if (xs.empty()) return {kNaN, kNaN};
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - out.mean) * (x - out.mean);
    out.stdev = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace

std::vector<PointSummary> summarize(const std::vector<StudyPoint>& points,
                                    const std::vector<StudyRow>& rows, int samples,
                                    Comparison comparison) {
  if (rows.size() != points.size() * static_cast<std::size_t>(samples)) {
    throw PreconditionError("summarize: row count does not match points x samples");
  }
  const bool linear = is_linear(comparison);
  std::vector<PointSummary> out;
  out.reserve(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    PointSummary summary;
    summary.point = points[p];
    std::vector<const StudyRow*> kept;
    for (int s = 0; s < samples; ++s) {
      const StudyRow& r = rows[p * samples + s];
      if (r.excluded) {
        ++summary.excluded;
      } else {
        kept.push_back(&r);
      }
    }
    summary.recorded = static_cast<int>(kept.size());
    for_columns(linear, [&](const Column& c) {
      std::vector<double> xs;
      xs.reserve(kept.size());
      for (const StudyRow* r : kept) xs.push_back(r->*c.field);
      summary.metrics[c.name] = moments(xs);
    });
    if (linear || kept.empty()) {
      summary.win_rate = kNaN;
    } else {
      int wins = 0;
      for (const StudyRow* r : kept) wins += r->ci_sk_perturbed >= r->ci_onestep_perturbed ? 1 : 0;
      summary.win_rate = static_cast<double>(wins) / static_cast<double>(kept.size());
    }
    out.push_back(std::move(summary));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Studies

StudyRecord run_perturbation_study(const StudyConfig& config, int threads) {
  return run_sk_comparison(config, threads);
}

StudyRecord run_lambda_sweep(const StudyConfig& config, int threads) {
  if (config.lambdas.empty()) fail("lambdas must be nonempty");
  return run_sk_comparison(config, threads);
}

StudyRecord run_linear_approx_study(const StudyConfig& config, int threads) {
  validate(config);
  Layout lay = layout(config);
  const std::vector<double> magnitudes = lay.magnitudes;
  const std::size_t per_shape = lay.per_shape;
  StudyRecord record = make_record(config, std::move(lay));
  const auto samples = static_cast<std::size_t>(config.samples);
  const PerturbTarget target = config.spec.target;

  auto unit = [&](std::size_t u) {
    const std::size_t shape_index = u / samples;
    const std::size_t s = u % samples;
    const Shape shape = config.shapes[shape_index];
    Stream stream = sample_stream(config.seed, s, shape.rows, shape.cols);
    const NonnegMatrix m = sample_dirichlet_matrix(shape.rows, shape.cols, config.dirichlet_alpha_M,
                                                   DirichletMode::kPerColumn, stream);
    const MarginalVector r = MarginalVector::uniform(shape.rows);
    const MarginalVector c = MarginalVector::uniform(shape.cols);
    std::vector<Index> positions;
    if (target == PerturbTarget::kMatrix) {
      positions = perturbation_positions(shape.rows * shape.cols, config.spec.fraction, stream);
    }

    for (std::size_t li = 0; li < config.lambdas.size(); ++li) {
      const double lambda = config.lambdas[li];
      const std::size_t first = shape_index * per_shape + li * magnitudes.size();
      std::optional<SinkhornResult> base;
      for (std::size_t mi = 0; mi < magnitudes.size(); ++mi) {
        StudyRow& row = record.rows[(first + mi) * samples + s];
        clear_ci(row);
        guarded(row, [&] {
          if (!base) base = sinkhorn(m, r, c, lambda);
          const double eps = magnitudes[mi];
          Matrix dm = Matrix::Zero(m.rows(), m.cols());
          Vector dr = Vector::Zero(m.rows());
          Vector dc = Vector::Zero(m.cols());
          NonnegMatrix moved_m = m;
          if (target == PerturbTarget::kMatrix) {
            moved_m = apply_perturbation(m, positions, eps);
            dm = moved_m.entries() - m.entries();
          } else {
            Vector& d = target == PerturbTarget::kPriorData ? dr : dc;
            const double shift = eps * (target == PerturbTarget::kPriorData ? r[0] : c[0]);
            d[0] = shift;
            d[1] = -shift;
          }
          const MarginalVector moved_r(Vector(r.values() + dr));
          const MarginalVector moved_c(Vector(c.values() + dc));
          const SinkhornResult moved = sinkhorn(moved_m, moved_r, moved_c, lambda);
          const LinearApproximation approx = linear_approx_plan(*base, m, r, c, dm, dr, dc);

          SinkhornScaler warm(log_of(moved_m, lambda), moved_r.values(), moved_c.values(), true);
          warm.set_log_scalings(lambda * base->alpha, lambda * base->beta);
          warm.normalize_rows();
          warm.normalize_cols();
          const NonnegMatrix onestep(warm.plan());

          row.err_stale = l1_distance(base->plan, moved.plan);
          row.err_linear = l1_distance(approx.plan.matrix(), moved.plan);
          row.err_onestep = l1_distance(onestep, moved.plan);
          row.clamp_mass = approx.clamp_mass;
          row.excluded = !base->converged || !moved.converged;
        });
      }
    }
  };
  parallel_for(config.shapes.size() * samples, threads > 0 ? threads : default_thread_count(),
               unit);
  record.summary = summarize(record.points, record.rows, config.samples, config.comparison);
  return record;
}

StudyRecord run_study(const StudyConfig& config, int threads) {
  switch (config.comparison) {
    case Comparison::kSkVsOnestep:
      return run_perturbation_study(config, threads);
    case Comparison::kLambdaSweep:
      return run_lambda_sweep(config, threads);
    case Comparison::kLinearApprox:
      return run_linear_approx_study(config, threads);
  }
  fail("unknown comparison");
  return {};
}

// ---------------------------------------------------------------------------
// Serialization

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

Json config_json(const StudyConfig& config) {
  Json shapes = Json::array();
  for (const Shape& s : config.shapes) shapes.push_back({s.rows, s.cols});
  Json j;
  j["schema"] = 1;
  j["comparison"] = to_string(config.comparison);
  j["shapes"] = shapes;
  j["dirichlet_alpha_M"] = config.dirichlet_alpha_M;
  j["dirichlet_alpha_prior"] = config.dirichlet_alpha_prior;
  j["lambdas"] = config.lambdas;
  j["perturbation"] = {{"fraction", config.spec.fraction},
                       {"magnitude", config.spec.magnitude},
                       {"target", to_string(config.spec.target)}};
  j["perturbed_agent"] = to_string(config.perturbed_agent);
  j["magnitudes"] = study_magnitudes(config);
  j["samples"] = config.samples;
  j["seed"] = config.seed;
  return j;
}

std::pair<int, int> line_column(const std::string& text, std::size_t offset) {
  int line = 1;
  int column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

template <class E>
E parse_enum(const Json& value, const char* key, std::initializer_list<E> options) {
  if (!value.is_string()) fail(std::string(key) + " must be a string");
  const std::string name = value.get<std::string>();
  for (E e : options) {
    if (name == to_string(e)) return e;
  }
  fail(std::string(key) + ": unknown value \"" + name + "\"");
  return *options.begin();
}

double number(const Json& value, const std::string& key) {
  if (!value.is_number()) fail(key + " must be a number");
  return value.get<double>();
}

std::vector<double> numbers(const Json& value, const std::string& key) {
  if (!value.is_array()) fail(key + " must be an array of numbers");
  std::vector<double> out;
  for (const Json& v : value) out.push_back(number(v, key));
  return out;
}

Index positive_integer(const Json& value, const std::string& key) {
  if (!value.is_number_integer() || value.get<std::int64_t>() < 1) {
    fail(key + " must be a positive integer");
  }
  return static_cast<Index>(value.get<std::int64_t>());
}

}  // namespace

std::string study_config_to_json(const StudyConfig& config) { return config_json(config).dump(2); }

StudyConfig study_config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    const auto [line, column] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw PreconditionError("study config: line " + std::to_string(line) + ", column " +
                            std::to_string(column) + ": malformed JSON");
  }
  if (!j.is_object()) fail("top level must be an object");
  if (!j.contains("schema") || !j["schema"].is_number_integer() || j["schema"].get<int>() != 1) {
    fail("schema must be 1");
  }
  Comparison comparison = Comparison::kSkVsOnestep;
  if (j.contains("comparison")) {
    comparison = parse_enum(j["comparison"], "comparison",
                            {Comparison::kSkVsOnestep, Comparison::kLinearApprox,
                             Comparison::kLambdaSweep});
  }
  StudyConfig config;
  switch (comparison) {
    case Comparison::kSkVsOnestep:
      config = StudyConfig::perturbation_defaults();
      break;
    case Comparison::kLambdaSweep:
      config = StudyConfig::lambda_sweep_defaults(
          j.contains("dirichlet_alpha_M") ? number(j["dirichlet_alpha_M"], "dirichlet_alpha_M")
                                          : 10.0);
      break;
    case Comparison::kLinearApprox:
      config = StudyConfig::linear_approx_defaults();
      break;
  }

  for (const auto& [key, value] : j.items()) {
    if (key == "schema" || key == "comparison") continue;
    if (key == "shapes") {
      if (!value.is_array()) fail("shapes must be an array of [rows, cols]");
      config.shapes.clear();
      for (const Json& s : value) {
        if (!s.is_array() || s.size() != 2) fail("shapes must be an array of [rows, cols]");
        config.shapes.push_back({positive_integer(s[0], "shapes"), positive_integer(s[1], "shapes")});
      }
    } else if (key == "dirichlet_alpha_M") {
      config.dirichlet_alpha_M = number(value, key);
    } else if (key == "dirichlet_alpha_prior") {
      config.dirichlet_alpha_prior = number(value, key);
    } else if (key == "lambdas") {
      config.lambdas = numbers(value, key);
    } else if (key == "magnitudes") {
      config.magnitudes = numbers(value, key);
    } else if (key == "samples") {
      config.samples = static_cast<int>(positive_integer(value, key));
    } else if (key == "seed") {
      if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
        fail("seed must be a nonnegative integer");
      }
      config.seed = value.get<std::uint64_t>();
    } else if (key == "perturbed_agent") {
      config.perturbed_agent =
          parse_enum(value, "perturbed_agent", {Agent::kLearner, Agent::kTeacher});
    } else if (key == "perturbation") {
      if (!value.is_object()) fail("perturbation must be an object");
      for (const auto& [pkey, pvalue] : value.items()) {
        if (pkey == "fraction") {
          config.spec.fraction = number(pvalue, "perturbation.fraction");
        } else if (pkey == "magnitude") {
          config.spec.magnitude = number(pvalue, "perturbation.magnitude");
        } else if (pkey == "target") {
          config.spec.target = parse_enum(pvalue, "perturbation.target",
                                          {PerturbTarget::kMatrix, PerturbTarget::kPriorHyp,
                                           PerturbTarget::kPriorData});
        } else {
          fail("unknown key perturbation." + pkey);
        }
      }
    } else {
      fail("unknown key " + key);
    }
  }
  config.comparison = comparison;
  validate(config);
  return config;
}

std::string study_csv(const StudyRecord& record) {
  const bool linear = is_linear(record.config.comparison);
  std::string out = "# " + config_json(record.config).dump() + "\n";
  out += "point,sample,rows,cols,lambda,magnitude,seed,excluded";
  for_columns(linear, [&](const Column& c) {
    out += ',';
    out += c.name;
  });
  out += '\n';
  const std::string seed = std::to_string(record.config.seed);
  for (const StudyRow& row : record.rows) {
    const StudyPoint& p = record.points[row.point];
    out += std::to_string(row.point) + ',' + std::to_string(row.sample) + ',' +
           std::to_string(p.rows) + ',' + std::to_string(p.cols) + ',' + format_number(p.lambda) +
           ',' + format_number(p.magnitude) + ',' + seed + ',' + (row.excluded ? "1" : "0");
    for_columns(linear, [&](const Column& c) {
      out += ',';
      out += format_number(row.*c.field);
    });
    out += '\n';
  }
  return out;
}

std::string study_summary_json(const StudyRecord& record) {
  Json points = Json::array();
  for (const PointSummary& s : record.summary) {
    Json metrics = Json::object();
    for (const auto& [name, mo] : s.metrics) metrics[name] = {{"mean", mo.mean}, {"stdev", mo.stdev}};
    Json point = {{"rows", s.point.rows},
                  {"cols", s.point.cols},
                  {"lambda", s.point.lambda},
                  {"magnitude", s.point.magnitude},
                  {"recorded", s.recorded},
                  {"excluded", s.excluded},
                  {"metrics", metrics}};
    if (!is_linear(record.config.comparison)) {
      point["win_rate"] = s.win_rate;
      // CI relative to the 1/N of a learner that guesses uniformly.
      Json normalized = Json::object();
      for (const char* name : {"ci_sk", "ci_onestep", "ci_sk_perturbed", "ci_onestep_perturbed"}) {
        normalized[name] = s.metrics.at(name).mean * static_cast<double>(s.point.cols);
      }
      point["normalized_effectiveness"] = normalized;
    }
    points.push_back(point);
  }
  Json j;
  j["schema"] = 1;
  j["config"] = config_json(record.config);
  j["points"] = points;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Fixed scenarios

MarginalVector binomial_prior(double base_rate) {
  if (!(base_rate > 0.0 && base_rate < 1.0)) {
    throw PreconditionError("binomial_prior: base rate must lie in (0, 1)");
  }
  const double p = base_rate;
  const double q = 1.0 - p;
  return MarginalVector{q * q * q, 3 * p * q * q, 3 * p * p * q, p * p * p};
}

namespace {

Plan literal_listener(const NonnegMatrix& m, const MarginalVector& prior, double lambda) {
  const Matrix weighted = m.entries() * prior.values().asDiagonal();
  return Plan(row_stochastic(NonnegMatrix(weighted)), PlanKind::kLearnerConditional, lambda);
}

QuantifierModel quantifier_model(const NonnegMatrix& m, double base_rate, double lambda,
                                 bool eot) {
  const MarginalVector prior = binomial_prior(base_rate);
  Plan literal = literal_listener(m, prior, lambda);
  std::optional<Plan> learner;
  if (eot) {
    // Uniform utterance frequencies are not reachable under this pattern;
    // use the frequencies a naive teacher induces instead.
    const MarginalVector r(Vector(col_stochastic(m).entries() * prior.values()));
    const SinkhornResult sk = sinkhorn(m, r, prior, lambda);
    learner = learner_view(sk.plan, lambda);
  } else {
    const CommonGround ground(m, MarginalVector::uniform(m.rows()), prior);
    const Plan teacher = one_step_teacher(ground, lambda, Vector(Vector::Zero(m.rows())));
    learner = one_step_listener(teacher, prior);
  }
  const bool implicature = learner->matrix()(1, 3) < literal.matrix()(1, 3);
  return {base_rate, lambda, prior, std::move(*learner), std::move(literal), implicature};
}

}  // namespace

AppleReport apple_scenarios() {
  const NonnegMatrix quantifiers{{1, 0, 0, 0}, {0, 1, 1, 1}, {0, 0, 0, 1}};
  QuantifierReport q{quantifiers,
                     {"none", "some", "all"},
                     quantifier_model(quantifiers, 0.62, 3.4, false),
                     quantifier_model(quantifiers, 0.82, 1.0, true)};

  Matrix at_least = Matrix::Zero(4, 4);
  for (Index k = 0; k < 4; ++k) {
    for (Index h = k; h < 4; ++h) at_least(k, h) = 1.0;
  }
  const CommonGround ground = CommonGround::with_uniform_priors(NonnegMatrix(at_least));
  const SinkhornResult sk = sinkhorn(ground.matrix(), ground.prior_data(), ground.prior_hyp(), 1.0);
  Plan eot_teacher = teacher_view(sk.plan, 1.0);
  Plan eot_learner = learner_view(sk.plan, 1.0);
  Plan onestep_teacher = one_step_teacher(ground, 1.0);
  Plan onestep_learner = one_step_listener(onestep_teacher, ground.prior_hyp());
  const double eot_ci = cooperative_index(eot_teacher, eot_learner);
  const double onestep_ci = cooperative_index(onestep_teacher, onestep_learner);
  NumeralReport n{ground.matrix(),           std::move(eot_teacher),     std::move(eot_learner),
                  eot_ci,                    std::move(onestep_teacher), std::move(onestep_learner),
                  onestep_ci};
  return {std::move(q), std::move(n)};
}

AppendixCReport appendix_c_examples() {
  const NonnegMatrix teacher_m{{1, 5, 0}, {0, 1, 6}, {0, 0, 1}};
  const NonnegMatrix learner_m{{1, 5, 0}, {0, 1, 6}, {0.1, 0, 1}};
  const MarginalVector u3 = MarginalVector::uniform(3);

  std::vector<SensitivityCase> cases;
  for (double lambda : {1.0, 2.0, 40.0}) {
    Plan t = teacher_view(sinkhorn(teacher_m, u3, u3, lambda).plan, lambda);
    Plan l = learner_view(sinkhorn(learner_m, u3, u3, lambda).plan, lambda);
    const double ci = cooperative_index(t, l);
    cases.push_back({lambda, std::move(t), std::move(l), ci});
  }
  const DiagonalReport td = diagonal_report(teacher_m);
  const DiagonalReport ld = diagonal_report(learner_m);
  Permutation tl = td.permutations[td.leaders.front()];
  Permutation ll = ld.permutations[ld.leaders.front()];
  const bool mismatch = tl != ll;

  DivergentLimits d{NonnegMatrix::constant(2, 2, 1.0),
                    NonnegMatrix{{1.02, 1.0}, {1.0, 1.0}},
                    NonnegMatrix{{0.98, 1.0}, {1.0, 1.0}},
                    0.02,
                    {1.0, 10.0, 100.0, 1000.0},
                    {},
                    {},
                    {}};
  const MarginalVector u2 = MarginalVector::uniform(2);
  for (double lambda : d.lambdas) {
    d.raised_limits.push_back(sinkhorn(d.raised, u2, u2, lambda).plan);
    d.lowered_limits.push_back(sinkhorn(d.lowered, u2, u2, lambda).plan);
    d.separation.push_back(linf_distance(d.raised_limits.back(), d.lowered_limits.back()));
  }
  return {teacher_m, learner_m, std::move(cases), std::move(tl), std::move(ll), mismatch,
          std::move(d)};
}

}  // namespace eot
