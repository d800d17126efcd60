#include "eot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>

#include "eot/error.hpp"
#include "eot/feasibility.hpp"

namespace eot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const NonnegMatrix& a, const NonnegMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw PreconditionError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + " differ");
  }
}

void require_square(const NonnegMatrix& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw PreconditionError(std::string(what) + ": matrix must be square and nonempty");
  }
}

double shannon(const Vector& p) {
  double h = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

// Entries that lie on at least one positive diagonal.
SupportPattern diagonal_support(const NonnegMatrix& a) {
  const MarginalVector ones = MarginalVector::uniform(a.rows(), static_cast<double>(a.rows()));
  return scalable_support(SupportPattern::of(a), ones, ones);
}

// Min-cost perfect assignment (rows to columns) by the shortest augmenting
// path method with potentials. Costs may be +infinity for forbidden pairs as
// long as a finite assignment exists.
std::vector<Index> min_cost_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);  // match[col] = row, 1-based
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      double delta = kInf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> sigma(n);
  for (Index j = 1; j <= n; ++j) sigma[match[j] - 1] = j - 1;
  return sigma;
}

}  // namespace

double cooperative_index(const Plan& teacher, const Plan& learner) {
  if (teacher.kind() != PlanKind::kTeacherConditional) {
    throw ContractError(std::string("cooperative_index: first plan must be teacher_conditional, got ") +
                        to_string(teacher.kind()));
  }
  if (learner.kind() != PlanKind::kLearnerConditional) {
    throw ContractError(std::string("cooperative_index: second plan must be learner_conditional, got ") +
                        to_string(learner.kind()));
  }
  require_same_shape(teacher.matrix(), learner.matrix(), "cooperative_index");
  const double inner = teacher.matrix().entries().cwiseProduct(learner.matrix().entries()).sum();
  return inner / static_cast<double>(teacher.cols());
}

double diagonal_product(const NonnegMatrix& a, const Permutation& sigma) {
  require_square(a, "diagonal_product");
  if (static_cast<Index>(sigma.size()) != a.rows()) {
    throw PreconditionError("diagonal_product: permutation length does not match matrix");
  }
  double d = 1.0;
  for (Index i = 0; i < a.rows(); ++i) d *= a(i, sigma[static_cast<std::size_t>(i)]);
  return d;
}

DiagonalReport diagonal_report(const NonnegMatrix& a, DiagonalMode mode) {
  require_square(a, "diagonal_report");
  const Index n = a.rows();
  DiagonalReport report;
  if (mode == DiagonalMode::kExhaustive) {
    if (n > 8) throw PreconditionError("diagonal_report: exhaustive mode needs n <= 8");
    Permutation sigma(static_cast<std::size_t>(n));
    std::iota(sigma.begin(), sigma.end(), Index{0});
    do {
      const double d = diagonal_product(a, sigma);
      if (d > 0.0) {
        report.permutations.push_back(sigma);
        report.products.push_back(d);
      }
    } while (std::next_permutation(sigma.begin(), sigma.end()));
    if (report.products.empty()) return report;
    const double best = *std::max_element(report.products.begin(), report.products.end());
    for (std::size_t k = 0; k < report.products.size(); ++k) {
      if (report.products[k] >= best * (1.0 - 1e-12)) report.leaders.push_back(k);
    }
    return report;
  }

  if (diagonal_support(a).rows() != n) return report;  // no positive diagonal
  Matrix cost(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) cost(i, j) = a(i, j) > 0.0 ? -std::log(a(i, j)) : kInf;
  Permutation sigma = min_cost_assignment(cost);
  report.products.push_back(diagonal_product(a, sigma));
  report.permutations.push_back(std::move(sigma));
  report.leaders.push_back(0);
  return report;
}

double cross_product_ratio(const NonnegMatrix& a, const Permutation& sigma,
                           const Permutation& sigma_prime) {
  const double denom = diagonal_product(a, sigma_prime);
  if (!(denom > 0.0)) throw ContractError("cross_product_ratio: reference diagonal product is zero");
  return diagonal_product(a, sigma) / denom;
}

bool cross_ratio_equivalent(const NonnegMatrix& a, const NonnegMatrix& b, double tol) {
  require_same_shape(a, b, "cross_ratio_equivalent");
  require_square(a, "cross_ratio_equivalent");
  const Index n = a.rows();
  const SupportPattern sa = diagonal_support(a);
  const SupportPattern sb = diagonal_support(b);
  if (!(sa == sb)) return false;
  if (sa.rows() == 0) return true;  // neither has a positive diagonal

  // Fit log a - log b = x_i + y_j along a spanning forest, then check every
  // remaining entry of the support.
  Vector x = Vector::Zero(n);
  Vector y = Vector::Zero(n);
  std::vector<char> seen(static_cast<std::size_t>(2 * n), 0);
  auto diff = [&](Index i, Index j) { return std::log(a(i, j)) - std::log(b(i, j)); };
  for (Index root = 0; root < n; ++root) {
    if (seen[root]) continue;
    seen[root] = 1;
    std::queue<Index> q;
    q.push(root);
    while (!q.empty()) {
      const Index node = q.front();
      q.pop();
      if (node < n) {
        for (Index j = 0; j < n; ++j) {
          if (!sa(node, j) || seen[n + j]) continue;
          y[j] = diff(node, j) - x[node];
          seen[n + j] = 1;
          q.push(n + j);
        }
      } else {
        const Index j = node - n;
        for (Index i = 0; i < n; ++i) {
          if (!sa(i, j) || seen[i]) continue;
          x[i] = diff(i, j) - y[j];
          seen[i] = 1;
          q.push(i);
        }
      }
    }
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (sa(i, j) && std::abs(diff(i, j) - x[i] - y[j]) > tol) return false;
  return true;
}

double mutual_information(const NonnegMatrix& joint) {
  const double mass = joint.mass();
  if (std::abs(mass - 1.0) > 1e-9) {
    throw PreconditionError("mutual_information: joint must have unit mass, got " + std::to_string(mass));
  }
  double hxy = 0.0;
  const Matrix& e = joint.entries();
  for (Index k = 0; k < e.size(); ++k) {
    if (e.data()[k] > 0.0) hxy -= e.data()[k] * std::log(e.data()[k]);
  }
  return std::max(0.0, shannon(joint.row_sums()) + shannon(joint.col_sums()) - hxy);
}

double distortion(const NonnegMatrix& joint, const Matrix& cost) {
  if (cost.rows() != joint.rows() || cost.cols() != joint.cols()) {
    throw PreconditionError("distortion: cost shape does not match plan");
  }
  double d = 0.0;
  for (Index j = 0; j < joint.cols(); ++j)
    for (Index i = 0; i < joint.rows(); ++i)
      if (joint(i, j) > 0.0) d += joint(i, j) * cost(i, j);
  return d;
}

double rd_objective(const NonnegMatrix& joint, const Matrix& cost, double lambda) {
  if (!(lambda > 0.0)) throw PreconditionError("rd_objective: lambda must be > 0");
  return distortion(joint, cost) + mutual_information(joint) / lambda;
}

double l1_distance(const NonnegMatrix& a, const NonnegMatrix& b) {
  require_same_shape(a, b, "l1_distance");
  return (a.entries() - b.entries()).cwiseAbs().sum();
}

double linf_distance(const NonnegMatrix& a, const NonnegMatrix& b) {
  require_same_shape(a, b, "linf_distance");
  if (a.entries().size() == 0) return 0.0;
  return (a.entries() - b.entries()).cwiseAbs().maxCoeff();
}

}  // namespace eot
