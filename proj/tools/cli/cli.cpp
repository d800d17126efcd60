#include "cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <random>
#include <string>

#include "eot/error.hpp"
#include "eot/experiments.hpp"
#include "eot/gradients.hpp"
#include "eot/metrics.hpp"
#include "eot/planning.hpp"
#include "eot/sinkhorn.hpp"
#include "matrix_io.hpp"

namespace eot::cli {

namespace {

using Json = nlohmann::ordered_json;

Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Json vector_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

struct ScalingFlags {
  double tol = 1e-9;
  int max_iter = 10'000;
  std::string domain = "auto";
  bool strict = false;

  void attach(CLI::App& app) {
    app.add_option("--tol", tol, "L1 marginal tolerance")->capture_default_str();
    app.add_option("--max-iter", max_iter, "Sinkhorn sweep limit")->capture_default_str();
    app.add_option("--domain", domain, "auto, linear or log")
        ->check(CLI::IsMember({"auto", "linear", "log"}))
        ->capture_default_str();
    app.add_flag("--strict", strict, "exit 3 when Sinkhorn does not converge");
  }

  SinkhornOptions options() const {
    if (!(tol > 0.0)) throw PreconditionError("--tol must be > 0");
    if (max_iter < 1) throw PreconditionError("--max-iter must be >= 1");
    SinkhornOptions o;
    o.tol = tol;
    o.max_iter = max_iter;
    o.domain = domain == "linear" ? Domain::kLinear : domain == "log" ? Domain::kLog : Domain::kAuto;
    return o;
  }

  void echo(Json& config) const {
    config["tol"] = tol;
    config["max_iter"] = max_iter;
    config["domain"] = domain;
    config["strict"] = strict;
  }
};

Json diagnostics(const SinkhornResult& r) {
  return {{"converged", r.converged},   {"iterations", r.iterations},
          {"newton_steps", r.newton_steps}, {"residual", r.residual},
          {"domain", to_string(r.domain)}, {"pruned_entries", r.pruned_entries}};
}

MarginalVector marginal_or_uniform(const std::string& path, Index n) {
  if (path.empty()) return MarginalVector::uniform(n);
  const Vector v = read_vector_file(path);
  if (v.size() != n) {
    throw PreconditionError(path + ": expected " + std::to_string(n) + " entries, found " +
                            std::to_string(v.size()));
  }
  return MarginalVector(v);
}

int converged_or(bool converged, bool strict, std::ostream& err) {
  if (converged) return kOk;
  err << "warning: Sinkhorn scaling did not reach the tolerance\n";
  return strict ? kNotConverged : kOk;
}

// ---------------------------------------------------------------------------

struct SinkhornCommand {
  std::string matrix, cost, row_marginal, col_marginal, output = "-";
  double lambda = 1.0;
  ScalingFlags scaling;

  void attach(CLI::App& app) {
    auto* m = app.add_option("--matrix", matrix, "nonnegative matrix M; the kernel is M^lambda");
    auto* c = app.add_option("--cost", cost, "cost matrix C; the kernel is exp(-lambda C)");
    m->excludes(c);
    app.add_option("--row-marginal", row_marginal, "r (default uniform, mass 1)");
    app.add_option("--col-marginal", col_marginal, "c (default uniform, mass 1)");
    app.add_option("--lambda", lambda)->capture_default_str();
    app.add_option("-o,--output", output, "plan CSV, '-' for stdout")->capture_default_str();
    scaling.attach(app);
  }

  int run(std::ostream& out, std::ostream& err) const {
    if (matrix.empty() == cost.empty()) throw PreconditionError("give exactly one of --matrix, --cost");
    const Matrix input = read_matrix_file(matrix.empty() ? cost : matrix);
    const MarginalVector r = marginal_or_uniform(row_marginal, input.rows());
    const MarginalVector c = marginal_or_uniform(col_marginal, input.cols());
    const SinkhornResult res = matrix.empty()
                                   ? eot_plan(CostMatrix{input, Vector::Zero(input.rows())}, r, c,
                                              lambda, scaling.options())
                                   : sinkhorn(NonnegMatrix(input), r, c, lambda, scaling.options());
    Json config = {{"schema", 1}, {"command", "sinkhorn"}};
    config[matrix.empty() ? "cost" : "matrix"] = matrix.empty() ? cost : matrix;
    config["row_marginal"] = vector_json(r.values());
    config["col_marginal"] = vector_json(c.values());
    config["lambda"] = lambda;
    scaling.echo(config);
    write_output(output, matrix_csv(res.plan.entries(), {config.dump(), diagnostics(res).dump()}),
                 out);
    return converged_or(res.converged, scaling.strict, err);
  }
};

struct PlanCommand {
  std::string matrix, prior_data, prior_hyp, output = "-";
  std::string agent = "teacher";
  std::string method = "eot";
  bool joint = false;
  double lambda = 1.0;
  ScalingFlags scaling;

  void attach(CLI::App& app) {
    app.add_option("--matrix", matrix, "consistency matrix M (data x hypotheses)")->required();
    app.add_option("--prior-data", prior_data, "prior over data (default uniform)");
    app.add_option("--prior-hyp", prior_hyp, "prior over hypotheses (default uniform)");
    app.add_option("--lambda", lambda)->capture_default_str();
    app.add_option("--agent", agent)
        ->check(CLI::IsMember({"teacher", "learner"}))
        ->capture_default_str();
    app.add_option("--method", method, "eot, onestep, cooperative or argmax")
        ->check(CLI::IsMember({"eot", "onestep", "cooperative", "argmax"}))
        ->capture_default_str();
    app.add_flag("--joint", joint, "write the joint plan instead of the conditional one");
    app.add_option("-o,--output", output)->capture_default_str();
    scaling.attach(app);
  }

  int run(std::ostream& out, std::ostream& err) const {
    const NonnegMatrix m(read_matrix_file(matrix));
    const CommonGround ground(m, marginal_or_uniform(prior_data, m.rows()),
                              marginal_or_uniform(prior_hyp, m.cols()));
    const bool teacher = agent == "teacher";
    if (joint && method != "eot") throw PreconditionError("--joint is only defined for --method eot");
    std::optional<Plan> plan;
    bool converged = true;
    Json extra = Json::object();
    if (method == "eot") {
      const AgentPlan p = teacher ? teaching_plan(ground, lambda, std::nullopt, scaling.options())
                                  : learning_plan(ground, lambda, std::nullopt, scaling.options());
      plan = joint ? p.joint : p.conditional;
      converged = p.scaling.converged;
      extra = diagnostics(p.scaling);
    } else if (method == "onestep") {
      const Plan t = one_step_teacher(ground, lambda);
      plan = teacher ? t : one_step_listener(t, ground.prior_hyp());
    } else if (method == "cooperative") {
      const SinkhornOptions o = scaling.options();
      const CooperativeInferenceResult ci = cooperative_inference(ground, o.tol, o.max_iter);
      plan = teacher ? ci.teacher : ci.learner;
      converged = ci.converged;
      extra = {{"converged", ci.converged}, {"iterations", ci.iterations}, {"residual", ci.residual}};
    } else {
      if (!teacher) throw PreconditionError("--method argmax defines a teacher plan only");
      plan = argmax_plan(m);
    }
    Json config = {{"schema", 1},
                   {"command", "plan"},
                   {"matrix", matrix},
                   {"prior_data", vector_json(ground.prior_data().values())},
                   {"prior_hyp", vector_json(ground.prior_hyp().values())},
                   {"lambda", lambda},
                   {"agent", agent},
                   {"method", method},
                   {"kind", to_string(plan->kind())}};
    scaling.echo(config);
    std::vector<std::string> header{config.dump()};
    if (!extra.empty()) header.push_back(extra.dump());
    write_output(output, matrix_csv(plan->matrix().entries(), header), out);
    return converged_or(converged, scaling.strict, err);
  }
};

struct CiCommand {
  std::string teacher, learner, output = "-";

  void attach(CLI::App& app) {
    app.add_option("--teacher", teacher, "column-stochastic teacher plan")->required();
    app.add_option("--learner", learner, "row-stochastic learner plan")->required();
    app.add_option("-o,--output", output)->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    const Plan t(NonnegMatrix(read_matrix_file(teacher)), PlanKind::kTeacherConditional, 1.0);
    const Plan l(NonnegMatrix(read_matrix_file(learner)), PlanKind::kLearnerConditional, 1.0);
    if (t.rows() != l.rows() || t.cols() != l.cols()) {
      throw PreconditionError("teacher and learner plans differ in shape");
    }
    Json j = {{"config", {{"schema", 1}, {"command", "ci"}, {"teacher", teacher}, {"learner", learner}}},
              {"ci", cooperative_index(t, l)}};
    write_output(output, j.dump(2) + "\n", out);
    return kOk;
  }
};

struct GradCheckCommand {
  std::string shape = "5x7", output = "-";
  double lambda = 1.0;
  std::uint64_t seed = 0;
  double step = 1e-6;
  double fd_tol = 1e-12;
  double threshold = 1e-5;

  void attach(CLI::App& app) {
    app.add_option("--shape", shape, "rows x cols, e.g. 5x7")->capture_default_str();
    app.add_option("--lambda", lambda)->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    app.add_option("--step", step, "central-difference step")->capture_default_str();
    app.add_option("--fd-tol", fd_tol, "Sinkhorn tolerance at each probe")->capture_default_str();
    app.add_option("--threshold", threshold, "largest accepted relative error")
        ->capture_default_str();
    app.add_option("-o,--output", output)->capture_default_str();
  }

  int run(std::ostream& out, std::ostream& err) const {
    const auto x = shape.find('x');
    Index n = 0;
    Index m = 0;
    try {
      if (x == std::string::npos) throw std::invalid_argument("");
      std::size_t used = 0;
      n = std::stol(shape.substr(0, x), &used);
      if (used != x) throw std::invalid_argument("");
      m = std::stol(shape.substr(x + 1), &used);
      if (used != shape.size() - x - 1) throw std::invalid_argument("");
    } catch (const std::logic_error&) {
      throw PreconditionError("--shape must look like 5x7");
    }
    if (n < 1 || m < 1) throw PreconditionError("--shape needs positive dimensions");

    Stream stream = sample_stream(seed, 0, n, m);
    std::uniform_real_distribution<double> entry(0.1, 1.0);
    Matrix mm(n, m);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) mm(i, j) = entry(stream);
    const NonnegMatrix mat(mm);
    const MarginalVector r(sample_dirichlet(n, 5.0, stream));
    const MarginalVector c(sample_dirichlet(m, 5.0, stream));

    const GradientBundle bundle = compute_gradients(mat, r, c, lambda, fd_tol);
    const FdOptions fd{step, fd_tol};
    const FdGradient fr = finite_difference_grad(mat, r, c, lambda, FdTarget::kR, fd);
    const FdGradient fc = finite_difference_grad(mat, r, c, lambda, FdTarget::kC, fd);
    const FdGradient fm = finite_difference_grad(mat, r, c, lambda, FdTarget::kM, fd);
    const double er = relative_error(bundle.wrt_r, fr.slices);
    const double ec = relative_error(bundle.wrt_c, fc.slices);
    const double em = relative_error(bundle.wrt_M.slices, fm.slices);
    const double worst = std::max({er, ec, em});
    Json warnings = Json::array();
    for (const FdGradient* g : {&fr, &fc, &fm}) {
      if (!g->warning.empty()) warnings.push_back(g->warning);
    }
    Json j = {{"config",
               {{"schema", 1},
                {"command", "grad-check"},
                {"shape", shape},
                {"lambda", lambda},
                {"seed", seed},
                {"step", step},
                {"fd_tol", fd_tol},
                {"threshold", threshold}}},
              {"converged", bundle.base.converged},
              {"relative_error", {{"r", er}, {"c", ec}, {"M", em}}},
              {"max_relative_error", worst},
              {"pass", worst < threshold},
              {"warnings", warnings}};
    write_output(output, j.dump(2) + "\n", out);
    if (worst < threshold) return kOk;
    err << "gradient check failed: max relative error " << format_number(worst) << "\n";
    return kCheckFailed;
  }
};

struct StudyCommand {
  Comparison comparison;
  std::string config_path, output = "-", summary;
  std::optional<int> samples;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha_m;
  int threads = 0;
  bool strict = false;

  explicit StudyCommand(Comparison c) : comparison(c) {}

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "study configuration (JSON, schema 1)");
    app.add_option("--samples", samples, "override the sample count");
    app.add_option("--seed", seed, "override the seed");
    app.add_option("--alpha-m", alpha_m, "override the Dirichlet parameter of M");
    app.add_option("--threads", threads, "worker threads (0: EOTCOMM_THREADS or all cores)")
        ->capture_default_str();
    app.add_option("-o,--output", output, "per-sample CSV")->capture_default_str();
    app.add_option("--summary", summary, "aggregate JSON");
    app.add_flag("--strict", strict, "exit 3 when any sample was excluded");
  }

  int run(std::ostream& out, std::ostream& err) const {
    Json j = {{"schema", 1}};
    if (!config_path.empty()) {
      const std::string text = read_text_file(config_path);
      try {
        j = Json::parse(text);
      } catch (const Json::parse_error&) {
        // Re-parse through the library for a positioned message.
        study_config_from_json(text);
      }
      if (!j.is_object()) throw PreconditionError(config_path + ": expected a JSON object");
    }
    if (!j.contains("comparison")) {
      j["comparison"] = to_string(comparison);
    } else if (j["comparison"] != to_string(comparison)) {
      throw PreconditionError("config comparison " + j["comparison"].dump() +
                              " does not match this subcommand");
    }
    if (samples) j["samples"] = *samples;
    if (seed) j["seed"] = *seed;
    if (alpha_m) j["dirichlet_alpha_M"] = *alpha_m;
    if (threads < 0) throw PreconditionError("--threads must be >= 0");
    const StudyConfig config = study_config_from_json(j.dump());
    const StudyRecord record = run_study(config, threads);
    write_output(output, study_csv(record), out);
    if (!summary.empty()) write_output(summary, study_summary_json(record), out);
    int excluded = 0;
    for (const PointSummary& s : record.summary) excluded += s.excluded;
    if (excluded == 0) return kOk;
    err << "warning: " << excluded << " sample(s) excluded (non-convergence or rejected input)\n";
    return strict ? kNotConverged : kOk;
  }
};

Json plan_json(const Plan& p) { return matrix_json(p.matrix().entries()); }

struct AppleCommand {
  std::string output = "-";
  void attach(CLI::App& app) { app.add_option("-o,--output", output)->capture_default_str(); }

  int run(std::ostream& out, std::ostream&) const {
    const AppleReport a = apple_scenarios();
    auto model = [](const QuantifierModel& q) {
      return Json{{"base_rate", q.base_rate},
                  {"lambda", q.lambda},
                  {"prior", vector_json(q.prior.values())},
                  {"learner", plan_json(q.learner)},
                  {"literal", plan_json(q.literal)},
                  {"p_all_given_some", q.learner.matrix()(1, 3)},
                  {"literal_p_all_given_some", q.literal.matrix()(1, 3)},
                  {"some_implies_not_all", q.some_implies_not_all}};
    };
    Json j = {{"config", {{"schema", 1}, {"command", "apple"}}},
              {"quantifier",
               {{"utterances", a.quantifier.utterances},
                {"consistency", matrix_json(a.quantifier.consistency.entries())},
                {"onestep", model(a.quantifier.onestep)},
                {"eot", model(a.quantifier.eot)}}},
              {"numeral",
               {{"consistency", matrix_json(a.numeral.consistency.entries())},
                {"eot_teacher", plan_json(a.numeral.eot_teacher)},
                {"eot_learner", plan_json(a.numeral.eot_learner)},
                {"eot_ci", a.numeral.eot_ci},
                {"onestep_teacher", plan_json(a.numeral.onestep_teacher)},
                {"onestep_learner", plan_json(a.numeral.onestep_learner)},
                {"onestep_ci", a.numeral.onestep_ci}}}};
    write_output(output, j.dump(2) + "\n", out);
    return kOk;
  }
};

struct AppendixCCommand {
  std::string output = "-";
  void attach(CLI::App& app) { app.add_option("-o,--output", output)->capture_default_str(); }

  int run(std::ostream& out, std::ostream&) const {
    const AppendixCReport r = appendix_c_examples();
    Json cases = Json::array();
    for (const SensitivityCase& k : r.cases) {
      cases.push_back({{"lambda", k.lambda},
                       {"teacher", plan_json(k.teacher)},
                       {"learner", plan_json(k.learner)},
                       {"ci", k.ci}});
    }
    Json limits = Json::array();
    for (std::size_t k = 0; k < r.divergent.lambdas.size(); ++k) {
      limits.push_back({{"lambda", r.divergent.lambdas[k]},
                        {"raised", matrix_json(r.divergent.raised_limits[k].entries())},
                        {"lowered", matrix_json(r.divergent.lowered_limits[k].entries())},
                        {"separation", r.divergent.separation[k]}});
    }
    Json j = {{"config", {{"schema", 1}, {"command", "appendix-c"}}},
              {"teacher_matrix", matrix_json(r.teacher_matrix.entries())},
              {"learner_matrix", matrix_json(r.learner_matrix.entries())},
              {"cases", cases},
              {"teacher_leader", r.teacher_leader},
              {"learner_leader", r.learner_leader},
              {"leader_mismatch", r.leader_mismatch},
              {"divergent_limits",
               {{"base", matrix_json(r.divergent.base.entries())},
                {"raised", matrix_json(r.divergent.raised.entries())},
                {"lowered", matrix_json(r.divergent.lowered.entries())},
                {"epsilon", r.divergent.epsilon},
                {"limits", limits}}}};
    write_output(output, j.dump(2) + "\n", out);
    return kOk;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cooperative communication as entropy-regularized optimal transport"};
  app.name("eotcomm");
  app.require_subcommand(1);

  SinkhornCommand sinkhorn_cmd;
  PlanCommand plan_cmd;
  CiCommand ci_cmd;
  GradCheckCommand grad_cmd;
  StudyCommand perturb_cmd(Comparison::kSkVsOnestep);
  StudyCommand sweep_cmd(Comparison::kLambdaSweep);
  StudyCommand linear_cmd(Comparison::kLinearApprox);
  AppleCommand apple_cmd;
  AppendixCCommand appendix_cmd;

  sinkhorn_cmd.attach(*app.add_subcommand("sinkhorn", "Sinkhorn limit of a matrix or a cost"));
  plan_cmd.attach(*app.add_subcommand("plan", "teaching or learning plan of a common ground"));
  ci_cmd.attach(*app.add_subcommand("ci", "cooperative index of a teacher and a learner plan"));
  grad_cmd.attach(*app.add_subcommand("grad-check", "analytic gradients against finite differences"));
  perturb_cmd.attach(*app.add_subcommand("perturb-study", "CI under a perturbed common ground"));
  sweep_cmd.attach(*app.add_subcommand("lambda-sweep", "CI under perturbation across lambda"));
  linear_cmd.attach(*app.add_subcommand("linear-approx", "first-order repair of perturbed plans"));
  apple_cmd.attach(*app.add_subcommand("apple", "quantifier and numeral scenarios"));
  appendix_cmd.attach(*app.add_subcommand("appendix-c", "sensitivity of limits to small entries"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalidInput;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "sinkhorn") return sinkhorn_cmd.run(out, err);
    if (name == "plan") return plan_cmd.run(out, err);
    if (name == "ci") return ci_cmd.run(out, err);
    if (name == "grad-check") return grad_cmd.run(out, err);
    if (name == "perturb-study") return perturb_cmd.run(out, err);
    if (name == "lambda-sweep") return sweep_cmd.run(out, err);
    if (name == "linear-approx") return linear_cmd.run(out, err);
    if (name == "apple") return apple_cmd.run(out, err);
    return appendix_cmd.run(out, err);
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const SingularSystemError& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  }
}

}  // namespace eot::cli
