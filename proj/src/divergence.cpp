#include "eot/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eot/error.hpp"

namespace eot {

double entropy(const NonnegMatrix& p) {
  double h = 0.0;
  const Matrix& e = p.entries();
  for (Index k = 0; k < e.size(); ++k) {
    const double x = e.data()[k];
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

double kl_divergence(const NonnegMatrix& p, const NonnegMatrix& m) {
  if (p.rows() != m.rows() || p.cols() != m.cols()) {
    throw PreconditionError("kl_divergence: shape mismatch");
  }
  const double pm = p.mass();
  const double mm = m.mass();
  if (!(pm > 0.0) || !(mm > 0.0)) throw PreconditionError("kl_divergence: zero-mass argument");
  double d = 0.0;
  for (Index k = 0; k < p.entries().size(); ++k) {
    const double x = p.entries().data()[k] / pm;
    if (!(x > 0.0)) continue;
    const double y = m.entries().data()[k] / mm;
    if (!(y > 0.0)) return std::numeric_limits<double>::infinity();
    d += x * std::log(x / y);
  }
  return std::max(d, 0.0);
}

}  // namespace eot
