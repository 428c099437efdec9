#include "doctest.h"

#include "causalest/estimators.hpp"
#include "causalest/parallel.hpp"
#include "support.hpp"

using namespace causalest;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("scalar Riccati matches the closed form") {
  // σ^2 - 0.25σ - 1 = 0 for a = 0.5, h = q = r = 1.
  const auto kal = solve_riccati(test::scalar_system(0.5, 1.0, 1.0, 1.0));
  const double sigma = (0.25 + std::sqrt(4.0625)) / 2.0;
  CHECK(kal.sigma_bar(0, 0) == doctest::Approx(sigma).epsilon(1e-12));
  CHECK(kal.sigma_bar(0, 0) == doctest::Approx(1.13278).epsilon(1e-5));
  CHECK(kal.K(0, 0) == doctest::Approx(0.5 * sigma / (sigma + 1.0)).epsilon(1e-12));
  CHECK(kal.K(0, 0) == doctest::Approx(0.26556).epsilon(1e-4));
  CHECK(kal.A_tilde(0, 0) == doctest::Approx(0.23444).epsilon(1e-4));
}

TEST_CASE("Riccati without process noise") {
  MatrixXd A(2, 2);
  A << 0.3, 0.2, -0.1, 0.5;
  const auto sys = validate_system<double>(A, MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2),
                                           2.0 * MatrixXd::Identity(2, 2));
  const auto kal = solve_riccati(sys);
  CHECK(kal.sigma_bar.isZero(0));
  CHECK(kal.K.isZero(0));
  CHECK(kal.A_tilde == A);
  // Σ̄ = 0 cannot drive the smoother.
  const MatrixXd z = MatrixXd::Ones(2, 4);
  CHECK(code_of([&] { smoother_run_recursive(kal, z); }) == ErrorCode::SingularSigma);
  CHECK(code_of([&] { smoother_run_fixed_point(kal, z); }) == ErrorCode::SingularA);
}

TEST_CASE("reference system steady state") {
  const auto sys = reference_system();
  const auto kal = solve_riccati(sys);
  CHECK(kal.sigma_bar.trace() == doctest::Approx(1.86).epsilon(0.05));
  CHECK(kal.riccati_residual < 1e-10);
  CHECK((riccati_step(sys, kal.sigma_bar) - kal.sigma_bar).norm() < 1e-10);
  CHECK(detail::is_symmetric(kal.sigma_bar, 0.0));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(kal.sigma_bar);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
  const MatrixXd gain = sys.A * kal.sigma_bar * sys.H *
                        (sys.H.transpose() * kal.sigma_bar * sys.H + sys.R).inverse();
  CHECK(test::max_abs(gain - kal.K) < 1e-12);
  CHECK(test::max_abs(kal.A_tilde - (sys.A - kal.K * sys.H.transpose())) == 0.0);
  CHECK(spectral_radius(kal.A_tilde) < 1.0);
}

TEST_CASE("Riccati failure modes") {
  const auto sys = reference_system();
  CHECK(code_of([&] { solve_riccati(sys, 1e-12, 1); }) == ErrorCode::NoConvergence);

  // Innovation covariance with condition number 1e13 on the first step.
  const LinearSystem<double> ill{0.5 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2),
                                 Eigen::Vector2d(1e-13, 1.0).asDiagonal()};
  CHECK(code_of([&] { solve_riccati(ill); }) == ErrorCode::IllConditioned);
}

TEST_CASE("filter_run basics") {
  const auto kal = solve_riccati(reference_system());
  CHECK(filter_run(kal, MatrixXd(MatrixXd::Zero(2, 10))).values.isZero(0));

  Rng rng(1);
  const MatrixXd z = test::random_matrix(rng, 2, 2);
  const auto f = filter_run(kal, z);
  CHECK(f.values.col(0).isZero(0));
  CHECK((f.values.col(1) - kal.K * z.col(0)).norm() < 1e-15);

  const Eigen::Vector2d prior(1.0, -2.0);
  CHECK(filter_run(kal, z, VectorXd(prior)).values.col(0) == prior);
  CHECK(code_of([&] { filter_run(kal, MatrixXd(MatrixXd::Zero(3, 4))); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("filter is exactly causal") {
  const auto kal = solve_riccati(reference_system());
  Rng rng(2);
  const MatrixXd z = test::random_matrix(rng, 2, 30);
  const auto base = filter_run(kal, z).values;
  for (Index j : {0, 7, 29}) {
    MatrixXd zp = z;
    zp.col(j) += Eigen::Vector2d(3.0, -1.0);
    const auto pert = filter_run(kal, zp).values;
    CHECK(pert.leftCols(j + 1) == base.leftCols(j + 1));
    if (j + 1 < 30) CHECK(pert.col(j + 1) != base.col(j + 1));
  }
}

TEST_CASE("smoother: zero input and single step") {
  const auto kal = solve_riccati(reference_system());
  CHECK(smoother_run_recursive(kal, MatrixXd(MatrixXd::Zero(2, 12))).values.isZero(0));
  CHECK(smoother_run_fixed_point(kal, MatrixXd(MatrixXd::Zero(2, 12))).values.isZero(0));

  Rng rng(4);
  const MatrixXd z = test::random_matrix(rng, 2, 1);
  const VectorXd expected = kal.sigma_bar * (kal.system.A * kal.sigma_bar).inverse() * kal.K * z.col(0);
  CHECK((smoother_run_fixed_point(kal, z).values.col(0) - expected).norm() < 1e-12);
  CHECK((smoother_run_recursive(kal, z).values.col(0) - expected).norm() < 1e-12);
}

TEST_CASE("recursive and fixed-point smoothers agree") {
  const auto kal = solve_riccati(reference_system());
  double worst = 0.0;
  for (int s = 0; s < 100; ++s) {
    Rng rng(derive_seed(10, "test/smoother", s));
    for (Index N : {2, 10, 50}) {
      const MatrixXd z = 3.0 * test::random_matrix(rng, 2, N);
      worst = std::max(worst, test::max_abs(smoother_run_recursive(kal, z).values -
                                            smoother_run_fixed_point(kal, z).values));
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("smoothers agree on random systems") {
  Rng rng(77);
  int checked = 0;
  while (checked < 20) {
    const Index n = 1 + static_cast<Index>(rng.next_u64() % 4), m = 1 + static_cast<Index>(rng.next_u64() % 3);
    MatrixXd A = test::random_matrix(rng, n, n);
    A *= 0.9 / std::max(spectral_radius(A), 1e-3);
    const MatrixXd L = test::random_matrix(rng, n, n);
    const MatrixXd Lr = test::random_matrix(rng, m, m);
    LinearSystem<double> sys;
    try {
      sys = validate_system<double>(A, test::random_matrix(rng, n, m), L * L.transpose() + 0.1 * MatrixXd::Identity(n, n),
                                    Lr * Lr.transpose() + 0.1 * MatrixXd::Identity(m, m));
    } catch (const Error&) {
      continue;
    }
    const auto kal = solve_riccati(sys);
    const MatrixXd z = test::random_matrix(rng, m, 25);
    CHECK(test::max_abs(smoother_run_recursive(kal, z).values - smoother_run_fixed_point(kal, z).values) < 1e-8);
    ++checked;
  }
}

TEST_CASE("error_energies") {
  Rng rng(5);
  const MatrixXd x = test::random_matrix(rng, 2, 8);
  const EstimateSequence<double> exact_f{EstimateKind::Filter, x}, exact_s{EstimateKind::Smoother, x};
  const auto e = error_energies(x, exact_f, exact_s);
  CHECK(e.filter_total == 0.0);
  CHECK(e.smoother_total == 0.0);
  CHECK(e.filter_costs.isZero(0));

  const EstimateSequence<double> shifted{EstimateKind::Filter, x.array() + 1.0};
  const auto e2 = error_energies(x, shifted, exact_s);
  CHECK(e2.filter_mse == doctest::Approx(2.0));
  CHECK(e2.filter_total == doctest::Approx(16.0));

  const EstimateSequence<double> short_f{EstimateKind::Filter, x.leftCols(7)};
  CHECK(code_of([&] { error_energies(x, short_f, exact_s); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("Monte Carlo filter and smoother MSE on the reference system") {
  const auto sys = reference_system();
  const auto kal = solve_riccati(sys);
  constexpr std::size_t M = 2000;
  constexpr Index N = 100;

  auto run = [&](const InitialState<double>& init, const Injector<double>& inj, const char* path) {
    std::vector<double> f(M), s(M);
    parallel_for(M, 4, [&](std::size_t i) {
      const auto traj = simulate(sys, N, init, inj, derive_seed(21, path, i));
      const auto filt = filter_run(kal, traj.corrupted);
      const auto e = error_energies(traj, filt, smoother_run_recursive(kal, traj.corrupted, filt));
      f[i] = e.filter_mse;
      s[i] = e.smoother_mse;
    });
    return std::pair{std::accumulate(f.begin(), f.end(), 0.0) / M, std::accumulate(s.begin(), s.end(), 0.0) / M};
  };

  const auto [f_acc, s_acc] = run(InitialState<double>::filter_prior(kal.sigma_bar), Injector<double>::none(), "acc");
  CHECK(f_acc == doctest::Approx(kal.sigma_bar.trace()).epsilon(0.02));
  CHECK(f_acc == doctest::Approx(1.86).epsilon(0.05));
  CHECK(s_acc == doctest::Approx(0.92).epsilon(0.05));
  CHECK(s_acc < f_acc);

  const auto [f_mis, s_mis] = run(InitialState<double>::stationary(stationary_state_covariance(sys)),
                                  Injector<double>::nonlinear_square(), "mis");
  CHECK(f_mis == doctest::Approx(2.54).epsilon(0.05));
  CHECK(s_mis == doctest::Approx(1.17).epsilon(0.05));
}

TEST_CASE("estimators instantiate in long double") {
  using LD = long double;
  Matrix<LD> A(2, 2), H(2, 2);
  A << LD(-0.898), LD(0.950), LD(-0.056), LD(0.569);
  H << LD(0.443), LD(0.862), LD(-0.220), LD(-0.100);
  const auto sys = validate_system<LD>(A, H, Matrix<LD>::Identity(2, 2) / 2, Matrix<LD>::Identity(2, 2) / 2);
  const auto kal = solve_riccati(sys, LD(1e-15));
  CHECK(double(kal.riccati_residual) < 1e-15);
  CHECK(double(kal.sigma_bar.trace()) == doctest::Approx(solve_riccati(reference_system()).sigma_bar.trace()));
  Matrix<LD> z = Matrix<LD>::Ones(2, 10);
  z(1, 3) = LD(-2);
  CHECK(double((smoother_run_recursive(kal, z).values - smoother_run_fixed_point(kal, z).values).norm()) < 1e-14);
}
