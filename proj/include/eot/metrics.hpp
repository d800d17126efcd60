#pragma once

// Evaluation quantities: the cooperative index, diagonals and cross-product
// ratios, information measures (nats) and entrywise distances.

#include <vector>

#include "eot/matrix.hpp"
#include "eot/planning.hpp"

namespace eot {

/// CI(T, L) = (1/|H|) sum_ij T_ij L_ij: the average probability that the
/// learner recovers the hypothesis the teacher had in mind. Throws
/// ContractError unless T is teacher-conditional and L learner-conditional.
double cooperative_index(const Plan& teacher, const Plan& learner);

using Permutation = std::vector<Index>;

/// Positive diagonals {A_{i, sigma(i)}} of a square matrix and the leaders
/// among them (those with maximal product).
struct DiagonalReport {
  std::vector<Permutation> permutations;
  std::vector<double> products;
  /// Indices into `permutations`.
  std::vector<std::size_t> leaders;
};

enum class DiagonalMode {
  kExhaustive,  ///< all n! permutations, n <= 8; ties within 1e-12 relative
  kAssignment,  ///< one leader from the max-sum-of-logs assignment problem
};

DiagonalReport diagonal_report(const NonnegMatrix& a, DiagonalMode mode = DiagonalMode::kExhaustive);

/// Product of the entries selected by sigma.
double diagonal_product(const NonnegMatrix& a, const Permutation& sigma);

/// d_sigma / d_sigma'. Throws ContractError when d_sigma' = 0.
double cross_product_ratio(const NonnegMatrix& a, const Permutation& sigma,
                           const Permutation& sigma_prime);

/// True when A and B have the same positive diagonals and every ratio of
/// diagonal products agrees. Checked as: the entries lying on some positive
/// diagonal coincide, and on them log A - log B = x_i + y_j up to `tol`.
bool cross_ratio_equivalent(const NonnegMatrix& a, const NonnegMatrix& b, double tol = 1e-9);

/// H(X) + H(Y) - H(X, Y) for a joint of unit mass (within 1e-9).
double mutual_information(const NonnegMatrix& joint);
/// sum_ij P_ij d_ij over the support of P.
double distortion(const NonnegMatrix& joint, const Matrix& cost);
/// distortion + mutual_information / lambda.
double rd_objective(const NonnegMatrix& joint, const Matrix& cost, double lambda);

double l1_distance(const NonnegMatrix& a, const NonnegMatrix& b);
double linf_distance(const NonnegMatrix& a, const NonnegMatrix& b);

}  // namespace eot
