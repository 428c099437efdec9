#pragma once

#include "causalest/block_ops.hpp"
#include "causalest/common.hpp"
#include "causalest/estimators.hpp"
#include "causalest/model.hpp"
#include "causalest/parallel.hpp"
#include "causalest/rng.hpp"
#include "causalest/trust_region.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <tuple>
#include <vector>

namespace causalest {

// Worst-case smoothing-over-filtering advantage under an adversary u_N that
// enters the measurements through H'. With the stacked nominal errors ẽ, ẽˢ
// and the adversary-form operators Ξ̄, Ξ̄ˢ, the per-step energy gap for an
// adversary u_N = sqrt(Nγ) û, ||û|| <= 1, is
//
//   (1/N)(||ẽ||^2 - ||ẽˢ||^2) + û'B û + 2 b'û
//   B = γ (Ξ̄'Ξ̄ - Ξ̄ˢ'Ξ̄ˢ),   b = -sqrt(γ/N) (Ξ̄'ẽ - Ξ̄ˢ'ẽˢ).
//
// Each realization is minimized over the unit ball on its own; I_N(γ) is the
// average over realizations.

template <typename Scalar>
struct NominalRealization {
  Vector<Scalar> e_filter;    // stacked x_k - x̂_{k|k-1}
  Vector<Scalar> e_smoother;  // stacked x_k - x̂_{k|N-1}
  std::uint64_t seed = 0;

  Index horizon_blocks(Index n) const { return e_filter.size() / n; }

  /// (1/N)(||ẽ||^2 - ||ẽˢ||^2) for this realization.
  Scalar energy_gap(Index N) const {
    return (e_filter.squaredNorm() - e_smoother.squaredNorm()) / Scalar(N);
  }
};

/// Adversary-free trajectory with x_0 ~ N(0, Σ̄), so the filter started at
/// x̂_{0|-1} = 0 has the stationary error from the first step.
template <typename Scalar>
Trajectory<Scalar> simulate_nominal(const SteadyStateKalman<Scalar>& kal, const LinearSystem<Scalar>& sys,
                                    Index N, std::uint64_t seed) {
  return simulate(sys, N, InitialState<Scalar>::filter_prior(kal.sigma_bar), Injector<Scalar>::none(), seed);
}

template <typename Scalar>
NominalRealization<Scalar> nominal_errors_from(const SteadyStateKalman<Scalar>& kal,
                                               const Trajectory<Scalar>& traj, std::uint64_t seed) {
  const auto filt = filter_run(kal, traj.corrupted);
  const auto smth = smoother_run_recursive(kal, traj.corrupted, filt);
  const Matrix<Scalar> ef = traj.states - filt.values;
  const Matrix<Scalar> es = traj.states - smth.values;
  return {StackedVector<Scalar>::from_sequence(ef).values(), StackedVector<Scalar>::from_sequence(es).values(),
          seed};
}

template <typename Scalar>
NominalRealization<Scalar> sample_nominal_errors(const SteadyStateKalman<Scalar>& kal,
                                                 const LinearSystem<Scalar>& sys, Index N, std::uint64_t seed) {
  return nominal_errors_from(kal, simulate_nominal(kal, sys, N, seed), seed);
}

template <typename Scalar>
NominalRealization<Scalar> sample_nominal_errors(const SteadyStateKalman<Scalar>& kal,
                                                 const LinearSystem<Scalar>& sys, Index N, std::uint64_t seed,
                                                 const InitialState<Scalar>& init) {
  return nominal_errors_from(kal, simulate(sys, N, init, Injector<Scalar>::none(), seed), seed);
}

template <typename Scalar>
struct NominalEnergies {
  Scalar alpha{};        // (1/N) E||ẽ||^2
  Scalar alpha_s{};      // (1/N) E||ẽˢ||^2
  Scalar delta_alpha{};  // alpha - alpha_s
  Scalar alpha_se{};
  Scalar alpha_s_se{};
  Scalar delta_alpha_se{};
  std::size_t count = 0;
};

namespace detail {

template <typename Scalar>
std::pair<Scalar, Scalar> mean_and_se(const std::vector<Scalar>& xs) {
  using std::sqrt;
  const Scalar n(xs.size());
  Scalar mean(0);
  for (Scalar x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, Scalar(0)};
  Scalar ss(0);
  for (Scalar x : xs) ss += (x - mean) * (x - mean);
  return {mean, sqrt(ss / (n - Scalar(1)) / n)};
}

}  // namespace detail

template <typename Scalar>
NominalEnergies<Scalar> nominal_energies(const std::vector<NominalRealization<Scalar>>& realizations, Index N) {
  detail::require(!realizations.empty(), ErrorCode::InvalidArgument, "need at least one realization");
  std::vector<Scalar> f, s, d;
  for (const auto& r : realizations) {
    f.push_back(r.e_filter.squaredNorm() / Scalar(N));
    s.push_back(r.e_smoother.squaredNorm() / Scalar(N));
    d.push_back(f.back() - s.back());
  }
  NominalEnergies<Scalar> out;
  std::tie(out.alpha, out.alpha_se) = detail::mean_and_se(f);
  std::tie(out.alpha_s, out.alpha_s_se) = detail::mean_and_se(s);
  std::tie(out.delta_alpha, out.delta_alpha_se) = detail::mean_and_se(d);
  out.count = realizations.size();
  return out;
}

template <typename Scalar>
struct QuadraticInstance {
  Matrix<Scalar> B_N;
  Vector<Scalar> b_N;
  Scalar delta_alpha{};
  Scalar gamma{};

  Scalar value(const Vector<Scalar>& u) const { return quadratic_value(B_N, b_N, u); }
};

/// Ξ̄'Ξ̄ - Ξ̄ˢ'Ξ̄ˢ in adversary form.
template <typename Scalar>
Matrix<Scalar> gram_difference(const BlockOperators<Scalar>& ops) {
  const Matrix<Scalar> g = ops.xi_filter_adv.transpose() * ops.xi_filter_adv -
                           ops.xi_smoother_adv.transpose() * ops.xi_smoother_adv;
  return detail::symmetrized(g);
}

/// Ξ̄'ẽ - Ξ̄ˢ'ẽˢ; scaled by -sqrt(γ/N) it is b_N.
template <typename Scalar>
Vector<Scalar> adversary_coupling(const BlockOperators<Scalar>& ops, const NominalRealization<Scalar>& r) {
  detail::require(r.e_filter.size() == ops.xi_filter_adv.rows() && r.e_smoother.size() == ops.xi_smoother_adv.rows(),
                  ErrorCode::DimensionMismatch, "realization horizon differs from operator horizon");
  return ops.xi_filter_adv.transpose() * r.e_filter - ops.xi_smoother_adv.transpose() * r.e_smoother;
}

template <typename Scalar>
QuadraticInstance<Scalar> assemble_quadratic(const BlockOperators<Scalar>& ops, Scalar gamma,
                                             const NominalRealization<Scalar>& r, Scalar delta_alpha) {
  using std::sqrt;
  detail::require(gamma >= Scalar(0), ErrorCode::InvalidArgument, "γ must be nonnegative");
  QuadraticInstance<Scalar> q;
  q.B_N = gamma * gram_difference(ops);
  q.b_N = -sqrt(gamma / Scalar(ops.N)) * adversary_coupling(ops, r);
  q.delta_alpha = delta_alpha;
  q.gamma = gamma;
  return q;
}

/// Block operators plus the spectral data of the Gram difference, shared by
/// every realization and every γ.
template <typename Scalar>
struct AdversaryModel {
  BlockOperators<Scalar> ops;
  SymmetricEigen<Scalar> gram_eig;
};

template <typename Scalar>
AdversaryModel<Scalar> build_adversary_model(const SteadyStateKalman<Scalar>& kal, Index N) {
  AdversaryModel<Scalar> model{build_block_operators(kal, N), {}};
  model.gram_eig = eig_sym(gram_difference(model.ops));
  return model;
}

/// min over ||û|| <= 1 of û'B_N û + 2 b_N'û for one realization.
template <typename Scalar>
TrustRegionSolution<Scalar> instance_minimum(const AdversaryModel<Scalar>& model, Scalar gamma,
                                             const Vector<Scalar>& coupling) {
  using std::sqrt;
  detail::require(gamma >= Scalar(0), ErrorCode::InvalidArgument, "γ must be nonnegative");
  const Vector<Scalar> b = -sqrt(gamma / Scalar(model.ops.N)) * coupling;
  return solve_unit_ball(Vector<Scalar>(gamma * model.gram_eig.values), model.gram_eig.vectors, b);
}

template <typename Scalar>
struct BoundEstimate {
  Scalar gamma{};
  Scalar i_n_mean{};
  Scalar std_err{};
  std::size_t num_realizations = 0;
  Scalar delta_alpha{};
};

template <typename Scalar>
struct GammaSweep {
  std::vector<BoundEstimate<Scalar>> points;
  std::optional<Scalar> zero_crossing;           // linear interpolation, absolute γ
  std::vector<std::vector<Scalar>> instance_minima;  // [grid point][realization]
  NominalEnergies<Scalar> nominal;
};

inline std::uint64_t realization_seed(std::uint64_t root, std::size_t i) {
  return derive_seed(root, "bound/realization", i);
}

template <typename Scalar>
std::optional<Scalar> zero_crossing(const std::vector<BoundEstimate<Scalar>>& points) {
  for (std::size_t j = 0; j < points.size(); ++j) {
    const Scalar y1 = points[j].i_n_mean;
    if (y1 > Scalar(0)) continue;
    if (j == 0) return points[0].gamma;
    const Scalar y0 = points[j - 1].i_n_mean;
    const Scalar g0 = points[j - 1].gamma, g1 = points[j].gamma;
    return g0 + (g1 - g0) * y0 / (y0 - y1);
  }
  return std::nullopt;
}

/// Evaluates I_N(γ) on a grid with the same realizations at every γ.
template <typename Scalar>
GammaSweep<Scalar> gamma_sweep(const SteadyStateKalman<Scalar>& kal, const LinearSystem<Scalar>& sys, Index N,
                               const std::vector<Scalar>& gamma_grid, std::size_t num_realizations,
                               std::uint64_t seed, int threads = 1) {
  detail::require(!gamma_grid.empty(), ErrorCode::InvalidArgument, "γ grid is empty");
  detail::require(num_realizations >= 1, ErrorCode::InvalidArgument, "need at least one realization");
  for (std::size_t j = 0; j < gamma_grid.size(); ++j) {
    detail::require(gamma_grid[j] >= Scalar(0), ErrorCode::InvalidArgument, "γ grid must be nonnegative");
    detail::require(j == 0 || gamma_grid[j] > gamma_grid[j - 1], ErrorCode::InvalidArgument,
                    "γ grid must be ascending");
  }
  const auto model = build_adversary_model(kal, N);

  std::vector<NominalRealization<Scalar>> realizations(num_realizations);
  std::vector<Scalar> gaps(num_realizations);
  std::vector<std::vector<Scalar>> minima(gamma_grid.size(), std::vector<Scalar>(num_realizations));
  parallel_for(num_realizations, threads, [&](std::size_t i) {
    realizations[i] = sample_nominal_errors(kal, sys, N, realization_seed(seed, i));
    gaps[i] = realizations[i].energy_gap(N);
    const Vector<Scalar> coupling = adversary_coupling(model.ops, realizations[i]);
    for (std::size_t j = 0; j < gamma_grid.size(); ++j)
      minima[j][i] = instance_minimum(model, gamma_grid[j], coupling).value;
  });

  GammaSweep<Scalar> out;
  out.nominal = nominal_energies(realizations, N);
  for (std::size_t j = 0; j < gamma_grid.size(); ++j) {
    std::vector<Scalar> totals(num_realizations);
    for (std::size_t i = 0; i < num_realizations; ++i) totals[i] = gaps[i] + minima[j][i];
    const auto [mean, se] = detail::mean_and_se(totals);
    out.points.push_back({gamma_grid[j], mean, se, num_realizations, out.nominal.delta_alpha});
  }
  out.zero_crossing = zero_crossing(out.points);
  out.instance_minima = std::move(minima);
  return out;
}

template <typename Scalar>
BoundEstimate<Scalar> bound_at_gamma(const SteadyStateKalman<Scalar>& kal, const LinearSystem<Scalar>& sys,
                                     Index N, Scalar gamma, std::size_t num_realizations, std::uint64_t seed,
                                     int threads = 1) {
  return gamma_sweep(kal, sys, N, std::vector<Scalar>{gamma}, num_realizations, seed, threads).points.front();
}

}  // namespace causalest
