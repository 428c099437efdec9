#pragma once

#include "causalest/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace causalest {

// Global minimization of u'Bu + 2b'u over ||u|| <= 1 for symmetric, possibly
// indefinite B. In the eigenbasis B = V diag(w) V', c = V'b, the stationary
// points are u(λ) = -V (c ./ (w + λ)) and the optimal multiplier minimizes the
// convex scalar dual
//
//   φ(λ) = sum_i c_i^2 / (w_i + λ) + λ,   λ >= max(-w_min, 0),
//
// whose optimum equals minus the primal optimum (strong duality).

template <typename Scalar>
struct TrustRegionProblem {
  Matrix<Scalar> B;
  Vector<Scalar> b;

  TrustRegionProblem(const Matrix<Scalar>& B_in, Vector<Scalar> b_in) : b(std::move(b_in)) {
    detail::require(B_in.rows() == B_in.cols() && B_in.rows() == b.size(), ErrorCode::DimensionMismatch,
                    "B must be d x d and b of length d");
    detail::require(B_in.allFinite() && b.allFinite(), ErrorCode::InvalidArgument,
                    "trust-region data must be finite");
    B = detail::symmetrized(B_in);
  }

  Index dim() const { return b.size(); }
};

/// Ascending eigenvalues with orthonormal eigenvectors in the columns.
template <typename Scalar>
struct SymmetricEigen {
  Vector<Scalar> values;
  Matrix<Scalar> vectors;

  SymmetricEigen scaled(Scalar alpha) const { return {values * alpha, vectors}; }
};

/// Backed by Eigen's self-adjoint tridiagonal QR solver.
template <typename Scalar>
SymmetricEigen<Scalar> eig_sym(const Matrix<Scalar>& B) {
  detail::require(B.rows() == B.cols(), ErrorCode::DimensionMismatch, "eig_sym needs a square matrix");
  if (B.size() == 0) return {Vector<Scalar>(), Matrix<Scalar>()};
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(detail::symmetrized(B));
  detail::require(es.info() == Eigen::Success, ErrorCode::NoConvergence,
                  "symmetric eigensolver did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

enum class TrustRegionCase { Interior, Boundary, HardCase };

template <typename Scalar>
struct TrustRegionSolution {
  Vector<Scalar> u_star;
  Scalar lambda_star{};
  Scalar value{};
  Scalar kkt_residual{};
  TrustRegionCase kind = TrustRegionCase::Interior;
};

inline constexpr double kHardCaseThreshold = 1e-10;

namespace detail {

template <typename Scalar>
Scalar spectral_scale(const Vector<Scalar>& w) {
  return w.size() ? std::max(Scalar(1), w.cwiseAbs().maxCoeff()) : Scalar(1);
}

}  // namespace detail

/// φ(λ). Terms with c_i = 0 sitting on a pole are dropped; a nonzero c_i on a
/// pole raises PoleHit.
template <typename Scalar>
Scalar dual_value(const SymmetricEigen<Scalar>& eig, const Vector<Scalar>& c, Scalar lambda) {
  using std::abs;
  const Scalar pole_tol = Scalar(1e-12) * std::max(Scalar(1), abs(lambda));
  Scalar phi = lambda;
  for (Index i = 0; i < c.size(); ++i) {
    const Scalar denom = eig.values[i] + lambda;
    if (abs(denom) <= pole_tol) {
      detail::require(c[i] == Scalar(0), ErrorCode::PoleHit, "dual evaluated on a pole");
      continue;
    }
    detail::require(denom > Scalar(0), ErrorCode::InvalidArgument, "λ below -λ_min(B)");
    phi += c[i] * c[i] / denom;
  }
  return phi;
}

template <typename Scalar>
Scalar dual_value(const TrustRegionProblem<Scalar>& prob, Scalar lambda) {
  const auto eig = eig_sym(prob.B);
  return dual_value(eig, Vector<Scalar>(eig.vectors.transpose() * prob.b), lambda);
}

/// Solves the problem given B = V diag(w) V'. Lets callers that rescale B
/// (B = γ G) reuse one decomposition.
template <typename Scalar>
TrustRegionSolution<Scalar> solve_unit_ball(const Vector<Scalar>& w, const Matrix<Scalar>& V,
                                            const Vector<Scalar>& b, Scalar tol = Scalar(1e-12)) {
  using std::abs;
  using std::sqrt;
  const Index d = b.size();
  detail::require(w.size() == d && V.rows() == d && V.cols() == d, ErrorCode::DimensionMismatch,
                  "eigendecomposition and b differ in dimension");
  const Vector<Scalar> c = V.transpose() * b;
  const Scalar b_norm = b.norm();
  const Scalar scale = detail::spectral_scale(w);
  const Scalar zero_tol = Scalar(1e-12) * scale;
  const Scalar hard_tol = Scalar(kHardCaseThreshold) * b_norm;

  auto finish = [&](Vector<Scalar> y, Scalar lambda, TrustRegionCase kind) {
    TrustRegionSolution<Scalar> sol;
    sol.value = (w.array() * y.array().square()).sum() + Scalar(2) * c.dot(y);
    sol.kkt_residual = ((w.array() + lambda) * y.array() + c.array()).matrix().norm();
    sol.u_star = V * y;
    sol.lambda_star = lambda;
    sol.kind = kind;
    detail::require(sol.kkt_residual <= Scalar(1e-8) * (Scalar(1) + b_norm), ErrorCode::NumericalBreakdown,
                    "trust-region KKT residual above tolerance");
    return sol;
  };
  auto stationary = [&](Scalar lambda) {
    Vector<Scalar> y(d);
    for (Index i = 0; i < d; ++i) {
      const Scalar denom = w[i] + lambda;
      y[i] = c[i] == Scalar(0) ? Scalar(0) : -c[i] / denom;
    }
    return y;
  };

  const Scalar w_min = d > 0 ? w[0] : Scalar(0);
  if (d == 0) return finish(Vector<Scalar>(), Scalar(0), TrustRegionCase::Interior);

  // Minimal eigenspace and the components of b it carries.
  std::vector<Index> minimal;
  bool b_orthogonal = true;
  const Scalar cluster_tol = w_min >= -zero_tol ? zero_tol : Scalar(1e-10) * scale;
  for (Index i = 0; i < d && w[i] <= w_min + cluster_tol; ++i) {
    minimal.push_back(i);
    if (abs(c[i]) > hard_tol) b_orthogonal = false;
  }

  Scalar lambda_lb;
  if (w_min >= -zero_tol) {
    // PSD: the unconstrained minimizer, if it exists and is feasible, is optimal.
    lambda_lb = Scalar(0);
    bool in_range = true;  // b has no component along the null space of B
    Vector<Scalar> y = Vector<Scalar>::Zero(d);
    for (Index i = 0; i < d; ++i) {
      if (w[i] > zero_tol)
        y[i] = -c[i] / w[i];
      else if (abs(c[i]) > hard_tol)
        in_range = false;
    }
    if (in_range && y.squaredNorm() <= Scalar(1)) return finish(std::move(y), Scalar(0), TrustRegionCase::Interior);
  } else {
    lambda_lb = -w_min;
    if (b_orthogonal) {
      Vector<Scalar> y = Vector<Scalar>::Zero(d);
      for (Index i = minimal.size(); i < d; ++i) y[i] = -c[i] / (w[i] - w_min);
      const Scalar norm2 = y.squaredNorm();
      if (norm2 < Scalar(1)) {
        const Index pick = minimal.front();
        y[pick] = (c[pick] > Scalar(0) ? Scalar(-1) : Scalar(1)) * sqrt(Scalar(1) - norm2);
        return finish(std::move(y), lambda_lb, TrustRegionCase::HardCase);
      }
    }
  }

  // Boundary: ψ(λ) = sum c_i^2/(w_i+λ)^2 - 1 is convex and decreasing on
  // (λ_lb, ∞) with a single root. Newton steps, bisection when they leave the bracket.
  auto psi = [&](Scalar lambda, Scalar* slope) {
    Scalar value(-1), deriv(0);
    for (Index i = 0; i < d; ++i) {
      if (c[i] == Scalar(0)) continue;
      const Scalar inv = Scalar(1) / (w[i] + lambda);
      const Scalar t = c[i] * c[i] * inv * inv;
      value += t;
      deriv -= Scalar(2) * t * inv;
    }
    if (slope) *slope = deriv;
    return value;
  };
  Scalar lo = lambda_lb;
  Scalar hi = lambda_lb + b_norm + sqrt(w.squaredNorm()) + Scalar(1);
  Scalar lambda = hi;
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  for (int it = 0; it < 1000; ++it) {
    Scalar slope;
    const Scalar f = psi(lambda, &slope);
    if (!(abs(f) > tol)) break;
    if (f > Scalar(0))
      lo = lambda;
    else
      hi = lambda;
    if (hi - lo <= Scalar(4) * eps * std::max(Scalar(1), hi)) break;
    Scalar next = lambda - f / slope;
    if (!(next > lo && next < hi)) next = lo + (hi - lo) / Scalar(2);
    lambda = next;
  }
  // Near the hard case ψ is steep at the root; put the residual norm error on
  // the minimal eigenspace, where it costs the least in stationarity.
  Vector<Scalar> y = stationary(lambda);
  Scalar cluster2(0);
  for (Index i : minimal) cluster2 += y[i] * y[i];
  const Scalar rest2 = y.squaredNorm() - cluster2;
  if (cluster2 > Scalar(0) && rest2 < Scalar(1)) {
    const Scalar factor = sqrt((Scalar(1) - rest2) / cluster2);
    for (Index i : minimal) y[i] *= factor;
  }
  return finish(std::move(y), lambda, TrustRegionCase::Boundary);
}

template <typename Scalar>
TrustRegionSolution<Scalar> solve_unit_ball(const SymmetricEigen<Scalar>& eig, const Vector<Scalar>& b,
                                            Scalar tol = Scalar(1e-12)) {
  return solve_unit_ball(eig.values, eig.vectors, b, tol);
}

template <typename Scalar>
TrustRegionSolution<Scalar> solve_unit_ball(const TrustRegionProblem<Scalar>& prob, Scalar tol = Scalar(1e-12)) {
  auto sol = solve_unit_ball(eig_sym(prob.B), prob.b, tol);
  // Report the residual against B itself rather than its eigendecomposition.
  sol.kkt_residual = (prob.B * sol.u_star + sol.lambda_star * sol.u_star + prob.b).norm();
  detail::require(sol.kkt_residual <= Scalar(1e-8) * (Scalar(1) + prob.b.norm()),
                  ErrorCode::NumericalBreakdown, "trust-region KKT residual above tolerance");
  return sol;
}

template <typename Scalar>
Scalar quadratic_value(const Matrix<Scalar>& B, const Vector<Scalar>& b, const Vector<Scalar>& u) {
  return u.dot(B * u) + Scalar(2) * b.dot(u);
}

}  // namespace causalest
