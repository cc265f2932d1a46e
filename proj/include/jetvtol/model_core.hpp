#pragma once

// Robot model, reduced jet-mount kinematics, thrust allocation and the
// centroidal momentum right-hand side.
//
// Frames: world z points up. The base frame is attached to the pelvis; the
// centre of mass sits at a constant offset from it (joint motion does not
// move the CoM in this reduced model). Joint vector layout:
//   0 left shoulder pitch, 1 left shoulder roll,
//   2 right shoulder pitch, 3 right shoulder roll.

#include <array>
#include <vector>

#include "jetvtol/common.hpp"

namespace jetvtol {

enum class MountParent { LeftArm, RightArm, JetpackLeft, JetpackRight };

struct JetMount {
  MountParent parent = MountParent::JetpackLeft;
  /// Parent frame to nozzle frame. For arms the parent frame is the shoulder
  /// frame after pitch and roll; for jetpack mounts it is the base frame.
  Iso3 fixed_transform = Iso3::Identity();
  /// Extra rotation about the base lateral (y) axis; jetpack mounts only.
  double tilt = 0.0;
  /// Direction of the force applied to the body, nozzle frame.
  Vec3 thrust_axis_local = Vec3::UnitZ();
};

struct FootGeometry {
  /// Contact points in the base frame.
  std::vector<Vec3> contact_points;
};

struct JointLimits {
  Vec4 lower = Vec4::Constant(-1.0);
  Vec4 upper = Vec4::Constant(1.0);
};

struct JointConfig {
  Vec4 angles = Vec4::Zero();
};

struct RobotModel {
  double mass = 40.0;
  Mat3 inertia_body = Eigen::Vector3d(2.0, 1.5, 1.0).asDiagonal();
  double gravity_accel = 9.81;
  Vec3 base_to_com = Vec3(-0.05, 0.0, 0.15);  // jetpack mass pulls the CoM back
  /// Shoulder joint centres in the base frame (left, right).
  std::array<Vec3, 2> shoulders{Vec3(0.0, 0.22, 0.40), Vec3(0.0, -0.22, 0.40)};
  std::array<JetMount, kNumJets> jets{};
  std::array<FootGeometry, 2> feet{};
  JointLimits joint_limits{};
  /// Posture the controller falls back to when nothing else matters.
  JointConfig nominal_posture{};

  /// Throws DomainError when an invariant is violated.
  void validate() const;
  double weight() const { return mass * gravity_accel; }
};

/// Reference configuration: 40 kg, two arm jets below the shoulders, two
/// jetpack jets behind the torso tilted 10 deg forward.
RobotModel reference_robot_model();

struct CentroidalState {
  Vec3 com_position = Vec3::Zero();
  Vec3 lin_momentum = Vec3::Zero();
  /// (yaw, pitch, roll), ZYX convention.
  Vec3 euler_zyx = Vec3::Zero();
  Vec3 ang_momentum = Vec3::Zero();
};

struct JetPose {
  Vec3 position;
  Vec3 axis;
};

/// Columns are [axis_i ; (p_i - com) x axis_i] in the world frame.
using AllocationMatrix = Mat6x4;

/// Throws DomainError if any angle lies outside the configured limits.
void check_joint_limits(const RobotModel& model, const JointConfig& q);

std::array<JetPose, kNumJets> jet_world_poses(const RobotModel& model, const JointConfig& q,
                                              const Iso3& base_pose);

/// World CoM for a base pose (constant base-to-CoM offset).
Vec3 com_position(const RobotModel& model, const Iso3& base_pose);

AllocationMatrix allocation_matrix(const RobotModel& model, const JointConfig& q,
                                   const Iso3& base_pose, const Vec3& com);

/// A single allocation column for a jet at `position` pushing along `axis`.
Vec6 allocation_column(const Vec3& position, const Vec3& axis, const Vec3& com);

/// A*T + alpha*(0,0,-m*g) in the force block. Torque is about the CoM.
Vec6 centroidal_rhs(const AllocationMatrix& a, const Vec4& thrusts, const RobotModel& model,
                    double alpha);

/// d(A(q)*T)/dq at fixed T, analytic.
Mat6x4 linearize_allocation(const RobotModel& model, const JointConfig& q, const Iso3& base_pose,
                            const Vec3& com, const Vec4& thrusts);

struct HoverTrim {
  JointConfig q;
  Vec4 thrusts;
};

/// Thrusts and a posture close to `start` whose allocated wrench balances
/// alpha * weight with zero moment, for the given base orientation.
HoverTrim solve_hover_trim(const RobotModel& model, const Mat3& base_rotation, double alpha,
                           const JointConfig& start);

}  // namespace jetvtol
