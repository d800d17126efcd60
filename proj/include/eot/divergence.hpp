#pragma once

// Entropy and relative entropy of nonnegative matrices, in nats.

#include "eot/matrix.hpp"

namespace eot {

/// Shannon entropy -sum P_ij log P_ij, with 0 log 0 = 0. No normalization
/// is applied.
double entropy(const NonnegMatrix& p);

/// D_KL(P || M) after rescaling both arguments to unit mass. Returns
/// +infinity when P is positive somewhere M vanishes. Shapes must agree.
double kl_divergence(const NonnegMatrix& p, const NonnegMatrix& m);

}  // namespace eot
