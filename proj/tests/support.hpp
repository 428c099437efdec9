#pragma once

#include "causalest/common.hpp"
#include "causalest/estimators.hpp"
#include "causalest/model.hpp"
#include "causalest/rng.hpp"

#include <cmath>

namespace causalest::test {

inline MatrixXd random_matrix(Rng& rng, Index rows, Index cols) {
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

inline MatrixXd random_symmetric(Rng& rng, Index d) {
  const MatrixXd m = random_matrix(rng, d, d);
  return 0.5 * (m + m.transpose());
}

inline double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

/// n = m = 1 system used for closed-form checks.
inline LinearSystem<double> scalar_system(double a, double h, double q, double r) {
  return validate_system<double>(MatrixXd::Constant(1, 1, a), MatrixXd::Constant(1, 1, h),
                                 MatrixXd::Constant(1, 1, q), MatrixXd::Constant(1, 1, r));
}

}  // namespace causalest::test
