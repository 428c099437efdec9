#pragma once

#include "causalest/common.hpp"
#include "causalest/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <vector>

namespace causalest {

/// x_{k+1} = A x_k + w_k,  z_k = H' x_k + v_k,  w ~ N(0, Q), v ~ N(0, R).
///
/// H is stored n x m and enters the measurement equation transposed.
template <typename Scalar>
struct LinearSystem {
  Matrix<Scalar> A;
  Matrix<Scalar> H;
  Matrix<Scalar> Q;
  Matrix<Scalar> R;

  Index n() const { return A.rows(); }
  Index m() const { return H.cols(); }
};

inline constexpr double kStabilityMargin = 1e-9;
inline constexpr double kNoiseSymmetryTol = 1e-10;
inline constexpr int kDefaultBurnIn = 200;

template <typename Scalar>
Scalar spectral_radius(const Matrix<Scalar>& A) {
  if (A.size() == 0) return Scalar(0);
  Eigen::EigenSolver<Matrix<Scalar>> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Square root factor L with L L' = M for a symmetric PSD M. Tiny negative
/// eigenvalues from rounding are clamped to zero.
template <typename Scalar>
Matrix<Scalar> psd_factor(const Matrix<Scalar>& M) {
  if (M.size() == 0) return M;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(detail::symmetrized(M));
  Vector<Scalar> root = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

/// Checks dimensions, stability, invertibility of A and the noise covariances.
template <typename Scalar>
LinearSystem<Scalar> validate_system(Matrix<Scalar> A, Matrix<Scalar> H, Matrix<Scalar> Q,
                                     Matrix<Scalar> R) {
  using std::abs;
  const Index n = A.rows();
  detail::require(n > 0 && A.cols() == n, ErrorCode::DimensionMismatch, "A must be square n x n");
  detail::require(H.rows() == n && H.cols() > 0, ErrorCode::DimensionMismatch,
                  "H must be n x m with n = rows(A)");
  const Index m = H.cols();
  detail::require(Q.rows() == n && Q.cols() == n, ErrorCode::DimensionMismatch, "Q must be n x n");
  detail::require(R.rows() == m && R.cols() == m, ErrorCode::DimensionMismatch, "R must be m x m");
  detail::require(A.allFinite() && H.allFinite() && Q.allFinite() && R.allFinite(),
                  ErrorCode::InvalidArgument, "system matrices must be finite");

  const Scalar tol(kNoiseSymmetryTol);
  detail::require(detail::is_symmetric(Q, tol), ErrorCode::NonPSDNoise, "Q is not symmetric");
  detail::require(detail::is_symmetric(R, tol), ErrorCode::NonPSDNoise, "R is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> q_eig(detail::symmetrized(Q), Eigen::EigenvaluesOnly);
  detail::require(q_eig.eigenvalues().minCoeff() >= -tol, ErrorCode::NonPSDNoise,
                  "Q is not positive semidefinite");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> r_eig(detail::symmetrized(R), Eigen::EigenvaluesOnly);
  detail::require(r_eig.eigenvalues().minCoeff() > tol, ErrorCode::NonPSDNoise,
                  "R is not positive definite");

  const Scalar rho = spectral_radius(A);
  detail::require(rho < Scalar(1) - Scalar(kStabilityMargin), ErrorCode::UnstableSystem,
                  "spectral radius of A is not below 1");

  Eigen::JacobiSVD<Matrix<Scalar>> svd(A);
  const auto& sv = svd.singularValues();
  detail::require(sv[n - 1] > Scalar(1e-12) * std::max(Scalar(1), sv[0]), ErrorCode::SingularA,
                  "A is singular");

  return LinearSystem<Scalar>{std::move(A), std::move(H), detail::symmetrized(Q),
                              detail::symmetrized(R)};
}

/// Distribution of x_0: N(0, cov), followed by `burn_in` free-running steps.
template <typename Scalar>
struct InitialState {
  Matrix<Scalar> cov;
  int burn_in = 0;

  static InitialState zero(Index n) { return {Matrix<Scalar>::Zero(n, n), 0}; }
  /// Matches a filter started at x̂ = 0 with error covariance Σ̄.
  static InitialState filter_prior(Matrix<Scalar> sigma_bar) { return {std::move(sigma_bar), 0}; }
  static InitialState stationary(Matrix<Scalar> p, int burn_in = kDefaultBurnIn) {
    return {std::move(p), burn_in};
  }
};

/// Columns are time steps: states.col(k) is x_k.
template <typename Scalar>
struct Trajectory {
  Matrix<Scalar> states;     // n x N
  Matrix<Scalar> clean;      // m x N, z_k
  Matrix<Scalar> corrupted;  // m x N, z_k + H' u_k
  Matrix<Scalar> adversary;  // n x N, u_k

  Index horizon() const { return states.cols(); }
};

enum class InjectorKind { None, NonlinearSquare, Table };

/// u_{k,0} = 1(x_{k,1} > 0) x_{k,1}^2,  u_{k,1} = 1(x_{k,0} > 0) x_{k,0}^2.
template <typename Derived>
Vector<typename Derived::Scalar> nonlinear_injector(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  detail::require(x.size() == 2, ErrorCode::DimensionMismatch,
                  "nonlinear injector is defined for n = 2 only");
  Vector<Scalar> u(2);
  u[0] = x[1] > Scalar(0) ? x[1] * x[1] : Scalar(0);
  u[1] = x[0] > Scalar(0) ? x[0] * x[0] : Scalar(0);
  return u;
}

/// The unmodeled input u_k as a function of the true state. A Table injector
/// replays its columns cyclically (a single column is a constant input).
template <typename Scalar>
struct Injector {
  InjectorKind kind = InjectorKind::None;
  Matrix<Scalar> table;

  static Injector none() { return {}; }
  static Injector nonlinear_square() { return {InjectorKind::NonlinearSquare, {}}; }
  static Injector constant(Vector<Scalar> c) { return {InjectorKind::Table, Matrix<Scalar>(c)}; }
  static Injector from_table(Matrix<Scalar> t) { return {InjectorKind::Table, std::move(t)}; }

  Vector<Scalar> operator()(const Vector<Scalar>& x, Index k) const {
    switch (kind) {
      case InjectorKind::None:
        return Vector<Scalar>::Zero(x.size());
      case InjectorKind::NonlinearSquare:
        return nonlinear_injector(x);
      case InjectorKind::Table:
        detail::require(table.rows() == x.size() && table.cols() > 0, ErrorCode::DimensionMismatch,
                        "injector table must have n rows and at least one column");
        return table.col(k % table.cols());
    }
    return Vector<Scalar>::Zero(x.size());
  }
};

template <typename Scalar>
Vector<Scalar> sample_initial_state(const InitialState<Scalar>& init, const LinearSystem<Scalar>& sys,
                                    Rng& rng) {
  const Index n = sys.n();
  detail::require(init.cov.rows() == n && init.cov.cols() == n, ErrorCode::DimensionMismatch,
                  "initial covariance must be n x n");
  Vector<Scalar> x = psd_factor(init.cov) * rng.normal_vector<Scalar>(n);
  const Matrix<Scalar> q_factor = psd_factor(sys.Q);
  for (int b = 0; b < init.burn_in; ++b) x = sys.A * x + q_factor * rng.normal_vector<Scalar>(n);
  return x;
}

template <typename Scalar>
Trajectory<Scalar> simulate(const LinearSystem<Scalar>& sys, Index horizon,
                            const InitialState<Scalar>& init, const Injector<Scalar>& injector,
                            Rng& rng) {
  detail::require(horizon >= 1, ErrorCode::InvalidArgument, "horizon must be >= 1");
  const Index n = sys.n();
  const Index m = sys.m();
  const Matrix<Scalar> q_factor = psd_factor(sys.Q);
  const Matrix<Scalar> r_factor = psd_factor(sys.R);
  const Matrix<Scalar> Ht = sys.H.transpose();

  Trajectory<Scalar> traj{Matrix<Scalar>(n, horizon), Matrix<Scalar>(m, horizon),
                          Matrix<Scalar>(m, horizon), Matrix<Scalar>(n, horizon)};
  Vector<Scalar> x = sample_initial_state(init, sys, rng);
  for (Index k = 0; k < horizon; ++k) {
    traj.states.col(k) = x;
    traj.clean.col(k) = Ht * x + r_factor * rng.normal_vector<Scalar>(m);
    traj.adversary.col(k) = injector(x, k);
    traj.corrupted.col(k) = traj.clean.col(k) + Ht * traj.adversary.col(k);
    x = sys.A * x + q_factor * rng.normal_vector<Scalar>(n);
  }
  return traj;
}

template <typename Scalar>
Trajectory<Scalar> simulate(const LinearSystem<Scalar>& sys, Index horizon,
                            const InitialState<Scalar>& init, const Injector<Scalar>& injector,
                            std::uint64_t seed) {
  Rng rng(seed);
  return simulate(sys, horizon, init, injector, rng);
}

/// Solves P = A P A' + Q by fixed-point iteration from P = Q.
template <typename Scalar>
Matrix<Scalar> stationary_state_covariance(const LinearSystem<Scalar>& sys, Scalar tol = Scalar(1e-12),
                                           long max_iter = 1'000'000) {
  Matrix<Scalar> P = detail::symmetrized(sys.Q);
  for (long it = 0; it < max_iter; ++it) {
    Matrix<Scalar> next = detail::symmetrized(Matrix<Scalar>(sys.A * P * sys.A.transpose() + sys.Q));
    const Scalar change = (next - P).norm();
    P = std::move(next);
    if (change < tol) return P;
  }
  throw Error(ErrorCode::NoConvergence, "stationary covariance iteration did not converge");
}

template <typename Scalar>
struct GammaEstimate {
  Scalar mean;
  Scalar std_err;  // batch-means estimate, accounts for serial correlation
  long num_samples;
};

/// Per-step energy of the unmodeled input, (1/T) sum ||u_k||^2, on a long
/// stationary run.
template <typename Scalar>
GammaEstimate<Scalar> measure_gamma(const LinearSystem<Scalar>& sys, const Injector<Scalar>& injector,
                                    long num_samples, std::uint64_t seed, int burn_in = kDefaultBurnIn) {
  detail::require(num_samples >= 10'000, ErrorCode::InvalidArgument,
                  "measure_gamma needs at least 1e4 samples");
  Rng rng(seed);
  const Index n = sys.n();
  const Matrix<Scalar> q_factor = psd_factor(sys.Q);
  Vector<Scalar> x = sample_initial_state(
      InitialState<Scalar>::stationary(stationary_state_covariance(sys), burn_in), sys, rng);

  constexpr long kBatches = 50;
  const long batch_len = num_samples / kBatches;
  std::vector<Scalar> batch_sums(kBatches, Scalar(0));
  Scalar total(0);
  for (long k = 0; k < num_samples; ++k) {
    const Scalar energy = injector(x, k).squaredNorm();
    total += energy;
    const long b = std::min(k / batch_len, kBatches - 1);
    batch_sums[b] += energy;
    x = sys.A * x + q_factor * rng.normal_vector<Scalar>(n);
  }
  const Scalar mean = total / Scalar(num_samples);
  Scalar var(0);
  for (long b = 0; b < kBatches; ++b) {
    const long len = b == kBatches - 1 ? num_samples - batch_len * (kBatches - 1) : batch_len;
    const Scalar d = batch_sums[b] / Scalar(len) - mean;
    var += d * d;
  }
  using std::sqrt;
  const Scalar std_err = sqrt(var / Scalar(kBatches - 1) / Scalar(kBatches));
  return {mean, std_err, num_samples};
}

/// System used throughout the synthetic experiment, with Q = R = 0.5 I.
inline LinearSystem<double> reference_system() {
  MatrixXd A(2, 2), H(2, 2);
  A << -0.898, 0.950, -0.056, 0.569;
  H << 0.443, 0.862, -0.220, -0.100;
  return validate_system<double>(A, H, 0.5 * MatrixXd::Identity(2, 2), 0.5 * MatrixXd::Identity(2, 2));
}

}  // namespace causalest
