#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace causalest {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using Index = Eigen::Index;

enum class ErrorCode {
  DimensionMismatch,
  LengthMismatch,
  InvalidArgument,
  UnstableSystem,
  SingularA,
  SingularSigma,
  NonPSDNoise,
  NoConvergence,
  IllConditioned,
  NumericalBreakdown,
  PoleHit,
  Divergence,
  Config,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnstableSystem: return "UnstableSystem";
    case ErrorCode::SingularA: return "SingularA";
    case ErrorCode::SingularSigma: return "SingularSigma";
    case ErrorCode::NonPSDNoise: return "NonPSDNoise";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::PoleHit: return "PoleHit";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Library-wide exception. The code is what callers branch on; the message is
/// for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar tol) {
  using std::abs;
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

template <typename Derived>
Matrix<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

}  // namespace detail

}  // namespace causalest
