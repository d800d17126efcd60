#include "eot/feasibility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "eot/error.hpp"

namespace eot {

namespace {

// Dinic max-flow on real capacities. Node 0 is the source, 1..n rows,
// n+1..n+m columns, n+m+1 the sink.
class FlowNetwork {
 public:
  struct Arc {
    int to;
    double cap;
    double flow;
  };

  explicit FlowNetwork(int nodes) : adj_(nodes), level_(nodes), next_(nodes) {}

  int add_arc(int from, int to, double cap) {
    adj_[from].push_back(static_cast<int>(arcs_.size()));
    arcs_.push_back({to, cap, 0.0});
    adj_[to].push_back(static_cast<int>(arcs_.size()));
    arcs_.push_back({from, 0.0, 0.0});
    return static_cast<int>(arcs_.size()) - 2;
  }

  double residual(int a) const { return arcs_[a].cap - arcs_[a].flow; }
  const Arc& arc(int a) const { return arcs_[a]; }
  const std::vector<int>& out(int v) const { return adj_[v]; }

  double max_flow(int s, int t, double eps) {
    eps_ = eps;
    double total = 0.0;
    while (bfs(s, t)) {
      std::fill(next_.begin(), next_.end(), 0);
      while (true) {
        const double pushed = dfs(s, t, std::numeric_limits<double>::infinity());
        if (pushed <= eps_) break;
        total += pushed;
      }
    }
    return total;
  }

  /// Nodes reachable from s through arcs with residual capacity > eps.
  std::vector<char> reachable(int s) const {
    std::vector<char> seen(adj_.size(), 0);
    std::queue<int> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int a : adj_[v]) {
        const int w = arcs_[a].to;
        if (!seen[w] && residual(a) > eps_) {
          seen[w] = 1;
          q.push(w);
        }
      }
    }
    return seen;
  }

 private:
  bool bfs(int s, int t) {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<int> q;
    level_[s] = 0;
    q.push(s);
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int a : adj_[v]) {
        const int w = arcs_[a].to;
        if (level_[w] < 0 && residual(a) > eps_) {
          level_[w] = level_[v] + 1;
          q.push(w);
        }
      }
    }
    return level_[t] >= 0;
  }

  double dfs(int v, int t, double limit) {
    if (v == t) return limit;
    for (int& k = next_[v]; k < static_cast<int>(adj_[v].size()); ++k) {
      const int a = adj_[v][k];
      const int w = arcs_[a].to;
      if (level_[w] != level_[v] + 1 || residual(a) <= eps_) continue;
      const double pushed = dfs(w, t, std::min(limit, residual(a)));
      if (pushed > eps_) {
        arcs_[a].flow += pushed;
        arcs_[a ^ 1].flow -= pushed;
        return pushed;
      }
    }
    return 0.0;
  }

  std::vector<Arc> arcs_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> level_;
  std::vector<int> next_;
  double eps_ = 0.0;
};

struct SolvedNetwork {
  FlowNetwork net;
  std::vector<int> entry_arc;  // row-major over the grid; -1 off pattern
  double flow = 0.0;
  double eps = 0.0;
};

SolvedNetwork solve(const SupportPattern& pattern, const MarginalVector& r,
                    const MarginalVector& c) {
  const auto n = static_cast<int>(pattern.rows());
  const auto m = static_cast<int>(pattern.cols());
  if (r.size() != n || c.size() != m) {
    throw PreconditionError("feasibility_check: marginal sizes do not match pattern");
  }
  const double scale = std::max({r.mass(), c.mass(), 1e-300});
  SolvedNetwork out{FlowNetwork(n + m + 2), std::vector<int>(n * m, -1), 0.0,
                    1e-12 * scale};
  const int s = 0;
  const int t = n + m + 1;
  const double unbounded = 4.0 * scale + 1.0;
  for (int i = 0; i < n; ++i) out.net.add_arc(s, 1 + i, r[i]);
  for (int j = 0; j < m; ++j) out.net.add_arc(1 + n + j, t, c[j]);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (pattern(i, j)) out.entry_arc[i * m + j] = out.net.add_arc(1 + i, 1 + n + j, unbounded);
    }
  }
  out.flow = out.net.max_flow(s, t, out.eps);
  return out;
}

bool masses_agree(const MarginalVector& r, const MarginalVector& c) {
  const double scale = std::max({r.mass(), c.mass(), 1e-300});
  return std::abs(r.mass() - c.mass()) <= 1e-9 * scale;
}

}  // namespace

SupportPattern SupportPattern::of(const NonnegMatrix& m) {
  SupportPattern p(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) p.set(i, j, m(i, j) > 0.0);
  }
  return p;
}

Index SupportPattern::count() const {
  return std::count(cells_.begin(), cells_.end(), char{1});
}

FeasibilityResult feasibility_check(const SupportPattern& pattern,
                                    const MarginalVector& r,
                                    const MarginalVector& c) {
  FeasibilityResult result;
  if (!masses_agree(r, c)) {
    result.witness_rows.resize(static_cast<std::size_t>(r.size()));
    std::iota(result.witness_rows.begin(), result.witness_rows.end(), Index{0});
    result.witness_cols.resize(static_cast<std::size_t>(c.size()));
    std::iota(result.witness_cols.begin(), result.witness_cols.end(), Index{0});
    result.deficit = std::abs(r.mass() - c.mass());
    return result;
  }
  SolvedNetwork solved = solve(pattern, r, c);
  result.max_flow = solved.flow;
  result.deficit = std::max(0.0, r.mass() - solved.flow);
  // Tolerance for accumulated rounding in the augmenting paths.
  result.feasible = result.deficit <= 1e-10 * std::max(r.mass(), 1e-300);
  if (result.feasible) return result;

  const auto seen = solved.net.reachable(0);
  const Index n = pattern.rows();
  for (Index i = 0; i < n; ++i) {
    if (seen[1 + i]) result.witness_rows.push_back(i);
  }
  for (Index j = 0; j < pattern.cols(); ++j) {
    if (seen[1 + n + j]) result.witness_cols.push_back(j);
  }
  return result;
}

SupportPattern scalable_support(const SupportPattern& pattern,
                                const MarginalVector& r,
                                const MarginalVector& c) {
  if (!masses_agree(r, c)) return {};
  SolvedNetwork solved = solve(pattern, r, c);
  if (r.mass() - solved.flow > 1e-10 * std::max(r.mass(), 1e-300)) return {};

  // An entry without flow can carry mass in some other feasible matrix iff
  // it closes a cycle in the residual graph: row i -> column j along any
  // pattern arc, column j -> row i' along arcs that carry flow.
  const auto n = static_cast<int>(pattern.rows());
  const auto m = static_cast<int>(pattern.cols());
  const int nodes = n + m;
  std::vector<std::vector<int>> graph(nodes);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const int a = solved.entry_arc[i * m + j];
      if (a < 0) continue;
      graph[i].push_back(n + j);
      if (solved.net.arc(a).flow > solved.eps) graph[n + j].push_back(i);
    }
  }

  // Tarjan's strongly connected components, iterative.
  std::vector<int> index(nodes, -1), low(nodes, 0), comp(nodes, -1);
  std::vector<char> on_stack(nodes, 0);
  std::vector<int> stack;
  int counter = 0;
  int comps = 0;
  for (int root = 0; root < nodes; ++root) {
    if (index[root] >= 0) continue;
    std::vector<std::pair<int, std::size_t>> call{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = 1;
    while (!call.empty()) {
      auto& [v, k] = call.back();
      if (k < graph[v].size()) {
        const int w = graph[v][k++];
        if (index[w] < 0) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = 1;
          call.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        int w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          comp[w] = comps;
        } while (w != v);
        ++comps;
      }
      const int done = v;
      call.pop_back();
      if (!call.empty()) {
        const int parent = call.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
    }
  }

  SupportPattern out(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const int a = solved.entry_arc[i * m + j];
      if (a < 0) continue;
      out.set(i, j, solved.net.arc(a).flow > solved.eps || comp[i] == comp[n + j]);
    }
  }
  return out;
}

}  // namespace eot
