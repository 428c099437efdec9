#pragma once

#include "causalest/common.hpp"
#include "causalest/model.hpp"

#include <Eigen/Eigenvalues>

#include <vector>

namespace causalest {

/// Time-invariant Kalman filter at steady state.
///
///   Σ̄ = A[Σ̄ - Σ̄H(H'Σ̄H + R)^{-1}H'Σ̄]A' + Q
///   K = AΣ̄H(H'Σ̄H + R)^{-1},   Ã = A - KH'
///
/// The filter is a one-step predictor: x̂_{k+1|k} = Ã x̂_{k|k-1} + K z_k.
template <typename Scalar>
struct SteadyStateKalman {
  LinearSystem<Scalar> system;
  Matrix<Scalar> sigma_bar;
  Matrix<Scalar> K;
  Matrix<Scalar> A_tilde;
  Scalar riccati_residual{};
  long iterations = 0;

  Index n() const { return system.n(); }
  Index m() const { return system.m(); }
};

/// One application of the Riccati map Σ -> A[Σ - ΣH(H'ΣH+R)^{-1}H'Σ]A' + Q.
template <typename Scalar>
Matrix<Scalar> riccati_step(const LinearSystem<Scalar>& sys, const Matrix<Scalar>& sigma) {
  const Matrix<Scalar> sh = sigma * sys.H;
  const Matrix<Scalar> innovation = sys.H.transpose() * sh + sys.R;
  const Matrix<Scalar> posterior = sigma - sh * innovation.ldlt().solve(sh.transpose());
  return detail::symmetrized(Matrix<Scalar>(sys.A * posterior * sys.A.transpose() + sys.Q));
}

template <typename Scalar>
Matrix<Scalar> kalman_gain(const LinearSystem<Scalar>& sys, const Matrix<Scalar>& sigma) {
  const Matrix<Scalar> innovation = sys.H.transpose() * sigma * sys.H + sys.R;
  const Matrix<Scalar> ash = sys.A * sigma * sys.H;
  // innovation is symmetric, so K' = innovation^{-1} (AΣH)'.
  return innovation.ldlt().solve(ash.transpose()).transpose();
}

template <typename Scalar>
SteadyStateKalman<Scalar> solve_riccati(const LinearSystem<Scalar>& sys, Scalar tol = Scalar(1e-12),
                                        long max_iter = 1'000'000) {
  Matrix<Scalar> sigma = detail::symmetrized(sys.Q);
  long it = 0;
  bool converged = false;
  while (it < max_iter) {
    const Matrix<Scalar> innovation = sys.H.transpose() * sigma * sys.H + sys.R;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> ev(innovation, Eigen::EigenvaluesOnly);
    const Scalar lo = ev.eigenvalues().minCoeff();
    const Scalar hi = ev.eigenvalues().maxCoeff();
    detail::require(lo > Scalar(0) && hi / lo <= Scalar(1e12), ErrorCode::IllConditioned,
                    "innovation covariance H'ΣH + R is ill-conditioned");
    Matrix<Scalar> next = riccati_step(sys, sigma);
    const Scalar change = (next - sigma).norm();
    sigma = std::move(next);
    ++it;
    if (change < tol) {
      converged = true;
      break;
    }
  }
  detail::require(converged, ErrorCode::NoConvergence, "Riccati iteration exceeded max_iter");

  SteadyStateKalman<Scalar> kal;
  kal.system = sys;
  kal.sigma_bar = sigma;
  kal.K = kalman_gain(sys, sigma);
  kal.A_tilde = sys.A - kal.K * sys.H.transpose();
  kal.riccati_residual = (riccati_step(sys, sigma) - sigma).norm();
  kal.iterations = it;
  return kal;
}

enum class EstimateKind { Filter, Smoother };

/// values.col(k) is x̂_{k|k-1} (filter) or x̂_{k|N-1} (smoother).
template <typename Scalar>
struct EstimateSequence {
  EstimateKind kind;
  Matrix<Scalar> values;

  Index horizon() const { return values.cols(); }
};

template <typename Scalar>
EstimateSequence<Scalar> filter_run(const SteadyStateKalman<Scalar>& kal, const Matrix<Scalar>& meas,
                                    const Vector<Scalar>& prior) {
  detail::require(meas.rows() == kal.m(), ErrorCode::DimensionMismatch, "measurement dimension");
  detail::require(prior.size() == kal.n(), ErrorCode::DimensionMismatch, "prior dimension");
  detail::require(meas.cols() >= 1, ErrorCode::InvalidArgument, "empty measurement sequence");
  const Index N = meas.cols();
  EstimateSequence<Scalar> out{EstimateKind::Filter, Matrix<Scalar>(kal.n(), N)};
  Vector<Scalar> x = prior;
  for (Index k = 0; k < N; ++k) {
    out.values.col(k) = x;
    x = kal.A_tilde * x + kal.K * meas.col(k);
  }
  return out;
}

template <typename Scalar>
EstimateSequence<Scalar> filter_run(const SteadyStateKalman<Scalar>& kal, const Matrix<Scalar>& meas) {
  return filter_run(kal, meas, Vector<Scalar>(Vector<Scalar>::Zero(kal.n())));
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> sigma_inverse(const Matrix<Scalar>& sigma) {
  Eigen::LLT<Matrix<Scalar>> llt(sigma);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const Vector<Scalar> d = llt.matrixLLT().diagonal().cwiseAbs();
    ok = d.minCoeff() > Scalar(1e-10) * std::max(Scalar(1), d.maxCoeff());
  }
  require(ok, ErrorCode::SingularSigma, "steady-state covariance is not invertible");
  return llt.solve(Matrix<Scalar>::Identity(sigma.rows(), sigma.cols()));
}

/// [AΣ̄]^{-1}
template <typename Scalar>
Matrix<Scalar> a_sigma_inverse(const SteadyStateKalman<Scalar>& kal) {
  const Matrix<Scalar> a_sigma = kal.system.A * kal.sigma_bar;
  Eigen::FullPivLU<Matrix<Scalar>> lu(a_sigma);
  lu.setThreshold(Scalar(1e-12));
  require(lu.isInvertible(), ErrorCode::SingularA, "[AΣ̄] is not invertible");
  return lu.inverse();
}

}  // namespace detail

/// Backward recursion
///   x̂_{k|N-1} = (Σ̄Ã'Σ̄^{-1}) x̂_{k+1|N-1} + (A^{-1} - Σ̄Ã'Σ̄^{-1}) x̂_{k+1|k},
/// started from the filtered estimate x̂_{N-1|N-1} = Σ̄[AΣ̄]^{-1} x̂_{N|N-1}.
template <typename Scalar>
EstimateSequence<Scalar> smoother_run_recursive(const SteadyStateKalman<Scalar>& kal,
                                                const Matrix<Scalar>& meas,
                                                const EstimateSequence<Scalar>& filter_out) {
  detail::require(filter_out.kind == EstimateKind::Filter, ErrorCode::InvalidArgument,
                  "smoother needs filter estimates");
  detail::require(meas.cols() == filter_out.horizon(), ErrorCode::LengthMismatch,
                  "measurements and filter estimates differ in length");
  detail::require(meas.rows() == kal.m(), ErrorCode::DimensionMismatch, "measurement dimension");
  const Index N = meas.cols();
  const Matrix<Scalar> sigma_inv = detail::sigma_inverse(kal.sigma_bar);
  const Matrix<Scalar> a_sigma_inv = detail::a_sigma_inverse(kal);
  const Matrix<Scalar> a_inv = kal.system.A.partialPivLu().inverse();
  const Matrix<Scalar> back_gain = kal.sigma_bar * kal.A_tilde.transpose() * sigma_inv;
  const Matrix<Scalar> pred_gain = a_inv - back_gain;

  const auto& f = filter_out.values;
  EstimateSequence<Scalar> out{EstimateKind::Smoother, Matrix<Scalar>(kal.n(), N)};
  const Vector<Scalar> terminal_prediction = kal.A_tilde * f.col(N - 1) + kal.K * meas.col(N - 1);
  out.values.col(N - 1) = kal.sigma_bar * a_sigma_inv * terminal_prediction;
  for (Index k = N - 2; k >= 0; --k)
    out.values.col(k) = back_gain * out.values.col(k + 1) + pred_gain * f.col(k + 1);
  return out;
}

template <typename Scalar>
EstimateSequence<Scalar> smoother_run_recursive(const SteadyStateKalman<Scalar>& kal,
                                                const Matrix<Scalar>& meas) {
  return smoother_run_recursive(kal, meas, filter_run(kal, meas));
}

/// Fixed-point gains K^a_d = Σ̄ (Ã')^d [AΣ̄]^{-1} K for d = 0..count-1.
template <typename Scalar>
std::vector<Matrix<Scalar>> fixed_point_gains(const SteadyStateKalman<Scalar>& kal, Index count) {
  const Matrix<Scalar> base = detail::a_sigma_inverse(kal) * kal.K;
  std::vector<Matrix<Scalar>> gains;
  gains.reserve(count);
  Matrix<Scalar> power = Matrix<Scalar>::Identity(kal.n(), kal.n());
  for (Index d = 0; d < count; ++d) {
    gains.push_back(kal.sigma_bar * power * base);
    power = power * kal.A_tilde.transpose();
  }
  return gains;
}

/// Fixed-point form driven by the filter innovations:
///   x̂_{j|N-1} = x̂_{j|j-1} + sum_{k=j}^{N-1} K^a_{k-j} (z_k - H'x̂_{k|k-1}),
/// with the filter started at x̂_{0|-1} = 0.
template <typename Scalar>
EstimateSequence<Scalar> smoother_run_fixed_point(const SteadyStateKalman<Scalar>& kal,
                                                  const Matrix<Scalar>& meas) {
  const auto filt = filter_run(kal, meas);
  const Index N = meas.cols();
  const Matrix<Scalar> innovations = meas - kal.system.H.transpose() * filt.values;
  const auto gains = fixed_point_gains(kal, N);
  EstimateSequence<Scalar> out{EstimateKind::Smoother, filt.values};
  for (Index j = 0; j < N; ++j)
    for (Index k = j; k < N; ++k) out.values.col(j) += gains[k - j] * innovations.col(k);
  return out;
}

template <typename Scalar>
struct ErrorEnergies {
  Vector<Scalar> filter_costs;    // c_{k|k-1} = ||x_k - x̂_{k|k-1}||^2
  Vector<Scalar> smoother_costs;  // c_{k|N-1}
  Scalar filter_total{};          // L_F
  Scalar smoother_total{};        // L_S
  Scalar filter_mse{};
  Scalar smoother_mse{};
};

template <typename Scalar>
ErrorEnergies<Scalar> error_energies(const Matrix<Scalar>& states, const EstimateSequence<Scalar>& filt,
                                     const EstimateSequence<Scalar>& smth) {
  detail::require(states.cols() == filt.horizon() && states.cols() == smth.horizon(),
                  ErrorCode::LengthMismatch, "state and estimate sequences differ in length");
  detail::require(states.rows() == filt.values.rows() && states.rows() == smth.values.rows(),
                  ErrorCode::DimensionMismatch, "state dimension");
  ErrorEnergies<Scalar> e;
  e.filter_costs = (states - filt.values).colwise().squaredNorm().transpose();
  e.smoother_costs = (states - smth.values).colwise().squaredNorm().transpose();
  e.filter_total = e.filter_costs.sum();
  e.smoother_total = e.smoother_costs.sum();
  const Scalar N(states.cols());
  e.filter_mse = e.filter_total / N;
  e.smoother_mse = e.smoother_total / N;
  return e;
}

template <typename Scalar>
ErrorEnergies<Scalar> error_energies(const Trajectory<Scalar>& traj, const EstimateSequence<Scalar>& filt,
                                     const EstimateSequence<Scalar>& smth) {
  return error_energies(traj.states, filt, smth);
}

}  // namespace causalest
