#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <stdexcept>
#include <string>

namespace jetvtol {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6x4 = Eigen::Matrix<double, 6, 4>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;
using Iso3 = Eigen::Isometry3d;

inline constexpr int kNumJets = 4;
inline constexpr int kNumJoints = 4;

/// Input outside the mathematical domain of an operation (limits, signs, ranges).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite values or a failed factorization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Euler-angle kinematics evaluated too close to the pitch singularity.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Eigen::Ref<const MatX>& m) { return m.allFinite(); }

}  // namespace jetvtol
