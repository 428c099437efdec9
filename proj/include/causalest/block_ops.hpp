#pragma once

#include "causalest/common.hpp"
#include "causalest/estimators.hpp"

#include <algorithm>
#include <vector>

namespace causalest {

/// A time series flattened into one vector, x_0 stacked on top of x_1 and so
/// on. With column-per-step storage this is the column-major buffer of the
/// sequence matrix.
template <typename Scalar>
class StackedVector {
 public:
  StackedVector(Vector<Scalar> values, Index block) : values_(std::move(values)), block_(block) {
    detail::require(block_ > 0 && values_.size() % block_ == 0, ErrorCode::DimensionMismatch,
                    "stacked length must be a multiple of the block size");
  }

  static StackedVector from_sequence(const Matrix<Scalar>& seq) {
    return StackedVector(Eigen::Map<const Vector<Scalar>>(seq.data(), seq.size()), seq.rows());
  }

  Matrix<Scalar> to_sequence() const {
    return Eigen::Map<const Matrix<Scalar>>(values_.data(), block_, values_.size() / block_);
  }

  const Vector<Scalar>& values() const { return values_; }
  Index block() const { return block_; }
  Index blocks() const { return values_.size() / block_; }

 private:
  Vector<Scalar> values_;
  Index block_;
};

/// Filter operator, measurement form (nN x mN): block (r, c) = 1(c < r) Ã^{r-1-c} K.
template <typename Scalar>
Matrix<Scalar> build_filter_operator(const SteadyStateKalman<Scalar>& kal, Index N) {
  detail::require(N >= 1, ErrorCode::InvalidArgument, "N must be >= 1");
  const Index n = kal.n(), m = kal.m();
  std::vector<Matrix<Scalar>> power_k;  // Ã^j K
  power_k.reserve(N);
  Matrix<Scalar> pk = kal.K;
  for (Index j = 0; j < N; ++j) {
    power_k.push_back(pk);
    pk = kal.A_tilde * pk;
  }
  Matrix<Scalar> op = Matrix<Scalar>::Zero(n * N, m * N);
  for (Index r = 1; r < N; ++r)
    for (Index c = 0; c < r; ++c) op.block(n * r, m * c, n, m) = power_k[r - 1 - c];
  return op;
}

/// Smoother operator, measurement form (nN x mN): block (k, i) = G̃_{k,i} K with
///
///   G̃_{k,i} = Ã^{k-i-1} - Σ̄ D̃_{k,i,k}                     for i < k
///   G̃_{k,i} = Σ̄ ((Ã')^{i-k} [AΣ̄]^{-1} - D̃_{k,i,i+1})     for i >= k
///   D̃_{k,i,s} = sum_{q=s}^{N-1} (Ã')^{q-k} [AΣ̄]^{-1} K H' Ã^{q-i-1}
///
/// In both branches the D̃ sum starts at q = max(k, i+1).
template <typename Scalar>
Matrix<Scalar> build_smoother_operator(const SteadyStateKalman<Scalar>& kal, Index N) {
  detail::require(N >= 1, ErrorCode::InvalidArgument, "N must be >= 1");
  const Index n = kal.n(), m = kal.m();
  detail::sigma_inverse(kal.sigma_bar);  // SingularSigma check
  const Matrix<Scalar> a_sigma_inv = detail::a_sigma_inverse(kal);
  const Matrix<Scalar> coupling = a_sigma_inv * kal.K * kal.system.H.transpose();
  const Matrix<Scalar>& sigma = kal.sigma_bar;

  std::vector<Matrix<Scalar>> pow_a(N + 1), pow_at(N + 1);
  pow_a[0] = pow_at[0] = Matrix<Scalar>::Identity(n, n);
  for (Index j = 1; j <= N; ++j) {
    pow_a[j] = pow_a[j - 1] * kal.A_tilde;
    pow_at[j] = pow_at[j - 1] * kal.A_tilde.transpose();
  }

  Matrix<Scalar> op(n * N, m * N);
  std::vector<Matrix<Scalar>> left(N);  // (Ã')^{q-k} [AΣ̄]^{-1} K H', indexed by q
  for (Index k = 0; k < N; ++k) {
    for (Index q = k; q < N; ++q) left[q] = pow_at[q - k] * coupling;
    for (Index i = 0; i < N; ++i) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(n, n);
      for (Index q = N - 1; q >= std::max(k, i + 1); --q) d += left[q] * pow_a[q - i - 1];
      const Matrix<Scalar> g = i < k ? Matrix<Scalar>(pow_a[k - i - 1] - sigma * d)
                                     : Matrix<Scalar>(sigma * (pow_at[i - k] * a_sigma_inv - d));
      op.block(n * k, m * i, n, m) = g * kal.K;
    }
  }
  return op;
}

/// Right-multiplies a measurement-form operator by blockdiag(H', ..., H') so it
/// acts on stacked adversary inputs u_N instead of stacked measurements.
template <typename Scalar>
Matrix<Scalar> adversary_form(const Matrix<Scalar>& op, const Matrix<Scalar>& H) {
  const Index n = H.rows(), m = H.cols();
  detail::require(m > 0 && op.cols() % m == 0, ErrorCode::DimensionMismatch,
                  "operator columns must be a multiple of m");
  const Index N = op.cols() / m;
  const Matrix<Scalar> Ht = H.transpose();
  Matrix<Scalar> out(op.rows(), n * N);
  for (Index c = 0; c < N; ++c) out.middleCols(n * c, n) = op.middleCols(m * c, m) * Ht;
  return out;
}

template <typename Scalar>
StackedVector<Scalar> apply(const Matrix<Scalar>& op, const StackedVector<Scalar>& v) {
  detail::require(op.cols() == v.values().size(), ErrorCode::DimensionMismatch,
                  "operator and stacked vector sizes differ");
  detail::require(op.rows() % v.blocks() == 0, ErrorCode::DimensionMismatch,
                  "operator rows are not a whole number of blocks");
  return StackedVector<Scalar>(op * v.values(), op.rows() / v.blocks());
}

template <typename Scalar>
struct BlockOperators {
  Matrix<Scalar> xi_filter;        // nN x mN
  Matrix<Scalar> xi_smoother;      // nN x mN
  Matrix<Scalar> xi_filter_adv;    // nN x nN
  Matrix<Scalar> xi_smoother_adv;  // nN x nN
  Index N = 0, n = 0, m = 0;
};

template <typename Scalar>
BlockOperators<Scalar> build_block_operators(const SteadyStateKalman<Scalar>& kal, Index N) {
  BlockOperators<Scalar> ops;
  ops.xi_filter = build_filter_operator(kal, N);
  ops.xi_smoother = build_smoother_operator(kal, N);
  ops.xi_filter_adv = adversary_form(ops.xi_filter, kal.system.H);
  ops.xi_smoother_adv = adversary_form(ops.xi_smoother, kal.system.H);
  ops.N = N;
  ops.n = kal.n();
  ops.m = kal.m();
  return ops;
}

}  // namespace causalest
