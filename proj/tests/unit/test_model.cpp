#include "doctest.h"

#include "causalest/model.hpp"
#include "causalest/parallel.hpp"
#include "causalest/rng.hpp"
#include "support.hpp"

#include <atomic>
#include <complex>
#include <set>

using namespace causalest;

TEST_CASE("validate_system accepts the reference system") {
  const auto sys = reference_system();
  CHECK(sys.n() == 2);
  CHECK(sys.m() == 2);
  Eigen::EigenSolver<MatrixXd> es(sys.A);
  std::vector<double> eig{es.eigenvalues()[0].real(), es.eigenvalues()[1].real()};
  std::sort(eig.begin(), eig.end());
  CHECK(std::abs(es.eigenvalues()[0].imag()) < 1e-15);
  CHECK(eig[0] == doctest::Approx(-0.861).epsilon(1e-3));
  CHECK(eig[1] == doctest::Approx(0.532).epsilon(1e-3));
  CHECK(spectral_radius(sys.A) < 1.0);
}

TEST_CASE("validate_system rejects bad systems") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;  // sentinel: nothing thrown
  };
  const MatrixXd one = MatrixXd::Identity(1, 1);

  CHECK(code_of([&] { validate_system<double>(one, one, one, one); }) == ErrorCode::UnstableSystem);
  CHECK(code_of([&] { validate_system<double>(0.5 * one, one, one, MatrixXd::Zero(1, 1)); }) ==
        ErrorCode::NonPSDNoise);
  CHECK(code_of([&] { validate_system<double>(0.5 * one, one, -one, one); }) == ErrorCode::NonPSDNoise);

  MatrixXd asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK(code_of([&] {
          validate_system<double>(0.5 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), asym,
                                  MatrixXd::Identity(2, 2));
        }) == ErrorCode::NonPSDNoise);

  MatrixXd singular(2, 2);
  singular << 0.5, 0, 0, 0;
  CHECK(code_of([&] {
          validate_system<double>(singular, MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2),
                                  MatrixXd::Identity(2, 2));
        }) == ErrorCode::SingularA);

  CHECK(code_of([&] { validate_system<double>(0.5 * one, MatrixXd::Identity(2, 2), one, one); }) ==
        ErrorCode::DimensionMismatch);
  MatrixXd nan_a = one * std::nan("");
  CHECK(code_of([&] { validate_system<double>(nan_a, one, one, one); }) == ErrorCode::InvalidArgument);

  // Marginal stability inside the 1e-9 margin is rejected.
  CHECK(code_of([&] { validate_system<double>((1.0 - 1e-10) * one, one, one, one); }) ==
        ErrorCode::UnstableSystem);
}

TEST_CASE("nonlinear_injector formula") {
  Eigen::Vector2d x;
  x << 1, 2;
  CHECK(nonlinear_injector(x).isApprox(Eigen::Vector2d(4, 1)));
  x << -1, -2;
  CHECK(nonlinear_injector(x).isZero());
  x << 3, -1;
  CHECK(nonlinear_injector(x).isApprox(Eigen::Vector2d(0, 9)));
  CHECK_THROWS_AS(nonlinear_injector(Eigen::Vector3d(1, 2, 3)), Error);

  Rng rng(3);
  for (int i = 0; i < 200; ++i) CHECK((nonlinear_injector(rng.normal_vector(2)).array() >= 0).all());
}

TEST_CASE("simulate: zero dynamics are exactly zero") {
  // Q = R = 0 fails validation (R must be definite) but simulation itself is well defined.
  const LinearSystem<double> sys{0.5 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2),
                                 MatrixXd::Zero(2, 2)};
  const auto traj = simulate(sys, 20, InitialState<double>::zero(2), Injector<double>::none(), 7);
  CHECK(traj.states.isZero(0));
  CHECK(traj.clean.isZero(0));
  CHECK(traj.corrupted.isZero(0));
}

TEST_CASE("simulate: determinism, seed sensitivity, injector plumbing") {
  const auto sys = reference_system();
  const auto init = InitialState<double>::stationary(stationary_state_covariance(sys));
  const auto a = simulate(sys, 50, init, Injector<double>::none(), 11);
  const auto b = simulate(sys, 50, init, Injector<double>::none(), 11);
  const auto c = simulate(sys, 50, init, Injector<double>::none(), 12);
  CHECK(a.states == b.states);
  CHECK(a.corrupted == b.corrupted);
  CHECK(a.states != c.states);
  CHECK(a.corrupted == a.clean);
  CHECK(a.adversary.isZero(0));

  const Eigen::Vector2d u(0.3, -1.2);
  const auto d = simulate(sys, 50, init, Injector<double>::constant(u), 11);
  CHECK(d.states == a.states);  // the injector never touches the state
  for (Index k = 0; k < 50; ++k) CHECK((d.corrupted.col(k) - d.clean.col(k) - sys.H.transpose() * u).norm() < 1e-14);

  const auto e = simulate(sys, 50, init, Injector<double>::nonlinear_square(), 11);
  for (Index k = 0; k < 50; ++k) CHECK(e.adversary.col(k) == nonlinear_injector(e.states.col(k)));

  MatrixXd table(2, 3);
  table << 1, 2, 3, 4, 5, 6;
  const auto f = simulate(sys, 7, init, Injector<double>::from_table(table), 1);
  CHECK(f.adversary.col(4) == table.col(1));
}

TEST_CASE("stationary_state_covariance closed forms") {
  const auto scalar = test::scalar_system(0.5, 1.0, 1.0, 1.0);
  CHECK(stationary_state_covariance(scalar)(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));

  const auto noiseless = validate_system<double>(0.5 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2),
                                                 MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2));
  CHECK(stationary_state_covariance(noiseless).isZero(0));

  const auto sys = reference_system();
  const MatrixXd P = stationary_state_covariance(sys);
  CHECK(test::max_abs(P - (sys.A * P * sys.A.transpose() + sys.Q)) < 1e-11);
}

TEST_CASE("stationary covariance matches a long empirical run within 2%") {
  const auto sys = reference_system();
  const MatrixXd P = stationary_state_covariance(sys);
  constexpr long steps = 1'000'000;
  const auto traj = simulate(sys, steps, InitialState<double>::zero(2), Injector<double>::none(),
                             derive_seed(5, "test/covariance"));
  const MatrixXd emp = traj.states * traj.states.transpose() / double(steps);
  CHECK(emp(0, 0) == doctest::Approx(P(0, 0)).epsilon(0.02));
  CHECK(emp(1, 1) == doctest::Approx(P(1, 1)).epsilon(0.02));
  CHECK(std::abs(emp(0, 1) - P(0, 1)) < 0.02 * std::sqrt(P(0, 0) * P(1, 1)));
}

TEST_CASE("measure_gamma") {
  const auto sys = reference_system();
  CHECK(measure_gamma(sys, Injector<double>::none(), 10'000, 1).mean == 0.0);

  const Eigen::Vector2d c(0.6, -0.8);
  const auto constant = measure_gamma(sys, Injector<double>::constant(c), 10'000, 1);
  CHECK(constant.mean == doctest::Approx(c.squaredNorm()).epsilon(1e-14));
  CHECK(constant.std_err < 1e-12);

  CHECK_THROWS_AS(measure_gamma(sys, Injector<double>::none(), 9'999, 1), Error);

  const auto g = measure_gamma(sys, Injector<double>::nonlinear_square(), 200'000, derive_seed(9, "test/gamma"));
  CHECK(g.mean == doctest::Approx(12.4 * sys.Q.trace()).epsilon(0.15));
  CHECK(g.std_err > 0.0);
  CHECK(g.std_err < 0.05 * g.mean);
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "a/b") == derive_seed(1, "a/b"));
  CHECK(derive_seed(1, "a/b") != derive_seed(2, "a/b"));
  CHECK(derive_seed(1, "a/b") != derive_seed(1, "a/c"));
  CHECK(derive_seed(1, "bound/realization", 3) == derive_seed(1, "bound/realization/3"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, "x", i));
  CHECK(seen.size() == 1000);

  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));

  CHECK_THROWS_AS(parallel_for(100, 3,
                               [](std::size_t i) {
                                 if (i == 17) throw Error(ErrorCode::InvalidArgument, "boom");
                               }),
                  Error);
}

TEST_CASE("model instantiates in long double") {
  using LD = long double;
  Matrix<LD> A(2, 2), H(2, 2);
  A << LD(-0.898), LD(0.950), LD(-0.056), LD(0.569);
  H << LD(0.443), LD(0.862), LD(-0.220), LD(-0.100);
  const auto sys = validate_system<LD>(A, H, Matrix<LD>::Identity(2, 2) / 2, Matrix<LD>::Identity(2, 2) / 2);
  const auto traj = simulate(sys, 10, InitialState<LD>::zero(2), Injector<LD>::nonlinear_square(), 3);
  CHECK(traj.states.allFinite());
  const Matrix<LD> P = stationary_state_covariance(sys, LD(1e-15));
  CHECK(double((P - (A * P * A.transpose() + sys.Q)).norm()) < 1e-14);
}
