#include "jetvtol/model_core.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "jetvtol/rotation.hpp"

namespace jetvtol {

namespace {

constexpr double kLimitSlack = 1e-12;

bool is_arm(MountParent p) { return p == MountParent::LeftArm || p == MountParent::RightArm; }

// Index of the pitch joint driving an arm mount; roll is pitch + 1.
int pitch_joint(MountParent p) { return p == MountParent::LeftArm ? 0 : 2; }

int shoulder_index(MountParent p) { return p == MountParent::LeftArm ? 0 : 1; }

// Rotation and translation of the nozzle frame relative to the base frame,
// plus the derivatives with respect to the two arm joints when applicable.
struct MountKinematics {
  Mat3 rotation;
  Vec3 translation;
  std::array<Mat3, 2> d_rotation{Mat3::Zero(), Mat3::Zero()};
  std::array<Vec3, 2> d_translation{Vec3::Zero(), Vec3::Zero()};
};

MountKinematics mount_in_base(const RobotModel& model, const JetMount& mount, const Vec4& q) {
  MountKinematics k;
  const Mat3 fr = mount.fixed_transform.linear();
  const Vec3 ft = mount.fixed_transform.translation();
  if (is_arm(mount.parent)) {
    const int j = pitch_joint(mount.parent);
    const Vec3& shoulder = model.shoulders[shoulder_index(mount.parent)];
    const Mat3 ry = rot::rot_y(q(j));
    const Mat3 rx = rot::rot_x(q(j + 1));
    const Mat3 chain = ry * rx;
    k.rotation = chain * fr;
    k.translation = shoulder + chain * ft;
    const Mat3 d_pitch = rot::drot_y(q(j)) * rx;
    const Mat3 d_roll = ry * rot::drot_x(q(j + 1));
    k.d_rotation = {d_pitch * fr, d_roll * fr};
    k.d_translation = {d_pitch * ft, d_roll * ft};
  } else {
    k.rotation = fr * rot::rot_y(mount.tilt);
    k.translation = ft;
  }
  return k;
}

}  // namespace

void RobotModel::validate() const {
  if (!(mass > 0.0) || !std::isfinite(mass)) throw DomainError("robot mass must be positive");
  if (!(gravity_accel > 0.0)) throw DomainError("gravity_accel must be positive");
  if ((inertia_body - inertia_body.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw DomainError("inertia_body must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(inertia_body);
  if (es.eigenvalues().minCoeff() <= 0.0) throw DomainError("inertia_body must be positive definite");
  int arms = 0;
  for (const auto& j : jets) {
    if (std::abs(j.thrust_axis_local.norm() - 1.0) > 1e-9) {
      throw DomainError("thrust_axis_local must be unit norm");
    }
    if (is_arm(j.parent)) ++arms;
  }
  if (arms != 2) throw DomainError("exactly two arm-mounted jets are required");
  for (int i = 0; i < kNumJoints; ++i) {
    if (joint_limits.lower(i) > joint_limits.upper(i)) throw DomainError("joint limits inverted");
  }
}

RobotModel reference_robot_model() {
  RobotModel m;
  constexpr double tilt = 10.0 * std::numbers::pi / 180.0;

  JetMount left_arm;
  left_arm.parent = MountParent::LeftArm;
  left_arm.fixed_transform.translation() = Vec3(0.0, 0.0, -0.45);
  JetMount right_arm = left_arm;
  right_arm.parent = MountParent::RightArm;

  JetMount pack_left;
  pack_left.parent = MountParent::JetpackLeft;
  pack_left.fixed_transform.translation() = Vec3(-0.12, 0.10, 0.30);
  pack_left.tilt = tilt;
  JetMount pack_right = pack_left;
  pack_right.parent = MountParent::JetpackRight;
  pack_right.fixed_transform.translation() = Vec3(-0.12, -0.10, 0.30);

  m.jets = {left_arm, right_arm, pack_left, pack_right};

  for (int side = 0; side < 2; ++side) {
    const double y = side == 0 ? 0.12 : -0.12;
    FootGeometry foot;
    for (double dx : {-0.14, 0.10}) {
      for (double dy : {-0.04, 0.04}) foot.contact_points.emplace_back(dx, y + dy, -0.85);
    }
    m.feet[side] = foot;
  }

  m.joint_limits.lower = Vec4(-0.8, -0.5, -0.8, -0.5);
  m.joint_limits.upper = Vec4(0.8, 0.5, 0.8, 0.5);
  // Arms pitched back so the arm thrust cancels the jetpack's forward component.
  m.nominal_posture.angles = Vec4(-0.17, 0.0, -0.17, 0.0);
  return m;
}

void check_joint_limits(const RobotModel& model, const JointConfig& q) {
  for (int i = 0; i < kNumJoints; ++i) {
    const double a = q.angles(i);
    if (!std::isfinite(a) || a < model.joint_limits.lower(i) - kLimitSlack ||
        a > model.joint_limits.upper(i) + kLimitSlack) {
      std::ostringstream os;
      os << "joint " << i << " angle " << a << " outside [" << model.joint_limits.lower(i) << ", "
         << model.joint_limits.upper(i) << "]";
      throw DomainError(os.str());
    }
  }
}

std::array<JetPose, kNumJets> jet_world_poses(const RobotModel& model, const JointConfig& q,
                                              const Iso3& base_pose) {
  check_joint_limits(model, q);
  std::array<JetPose, kNumJets> out;
  const Mat3 rb = base_pose.linear();
  for (int i = 0; i < kNumJets; ++i) {
    const auto k = mount_in_base(model, model.jets[i], q.angles);
    out[i].position = base_pose * k.translation;
    out[i].axis = (rb * k.rotation * model.jets[i].thrust_axis_local).normalized();
  }
  return out;
}

Vec3 com_position(const RobotModel& model, const Iso3& base_pose) {
  return base_pose * model.base_to_com;
}

Vec6 allocation_column(const Vec3& position, const Vec3& axis, const Vec3& com) {
  Vec6 col;
  col.head<3>() = axis;
  col.tail<3>() = (position - com).cross(axis);
  return col;
}

AllocationMatrix allocation_matrix(const RobotModel& model, const JointConfig& q,
                                   const Iso3& base_pose, const Vec3& com) {
  const auto poses = jet_world_poses(model, q, base_pose);
  AllocationMatrix a;
  for (int i = 0; i < kNumJets; ++i) a.col(i) = allocation_column(poses[i].position, poses[i].axis, com);
  return a;
}

Vec6 centroidal_rhs(const AllocationMatrix& a, const Vec4& thrusts, const RobotModel& model,
                    double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0, 1]");
  if ((thrusts.array() < 0.0).any() || !thrusts.allFinite()) {
    throw DomainError("thrusts must be finite and non-negative");
  }
  Vec6 rhs = a * thrusts;
  rhs(2) -= alpha * model.weight();
  return rhs;
}

Mat6x4 linearize_allocation(const RobotModel& model, const JointConfig& q, const Iso3& base_pose,
                            const Vec3& com, const Vec4& thrusts) {
  check_joint_limits(model, q);
  Mat6x4 jac = Mat6x4::Zero();
  const Mat3 rb = base_pose.linear();
  for (int i = 0; i < kNumJets; ++i) {
    const JetMount& mount = model.jets[i];
    if (!is_arm(mount.parent) || thrusts(i) == 0.0) continue;
    const auto k = mount_in_base(model, mount, q.angles);
    const Vec3 axis = rb * k.rotation * mount.thrust_axis_local;
    const Vec3 r = base_pose * k.translation - com;
    const int j0 = pitch_joint(mount.parent);
    for (int d = 0; d < 2; ++d) {
      const Vec3 d_axis = rb * k.d_rotation[d] * mount.thrust_axis_local;
      const Vec3 d_r = rb * k.d_translation[d];
      jac.col(j0 + d).head<3>() += thrusts(i) * d_axis;
      jac.col(j0 + d).tail<3>() += thrusts(i) * (d_r.cross(axis) + r.cross(d_axis));
    }
  }
  return jac;
}

HoverTrim solve_hover_trim(const RobotModel& model, const Mat3& base_rotation, double alpha,
                           const JointConfig& start) {
  Iso3 base = Iso3::Identity();
  base.linear() = base_rotation;
  const Vec3 com = com_position(model, base);
  Vec6 target = Vec6::Zero();
  target(2) = alpha * model.weight();

  JointConfig q = start;
  AllocationMatrix a = allocation_matrix(model, q, base, com);
  // Start from an even split; the minimum-norm steps then keep the thrusts
  // close to equal and the posture close to `start`.
  Vec4 t = Vec4::Constant(target(2) / std::max(1e-9, a.row(2).sum()));

  Eigen::Matrix<double, 8, 1> inv_w;
  inv_w << Vec4::Constant(1.0), Vec4::Constant(1e-4);
  for (int it = 0; it < 100; ++it) {
    a = allocation_matrix(model, q, base, com);
    const Vec6 r = a * t - target;
    if (r.norm() < 1e-12 * (1.0 + target.norm())) break;
    Eigen::Matrix<double, 6, 8> jac;
    jac << a, linearize_allocation(model, q, base, com, t);
    const Eigen::Matrix<double, 6, 6> s = jac * inv_w.asDiagonal() * jac.transpose();
    const Vec6 lambda = s.ldlt().solve(r);
    const Eigen::Matrix<double, 8, 1> step = -(inv_w.asDiagonal() * jac.transpose() * lambda);
    t = (t + step.head<4>()).cwiseMax(0.0);
    q.angles = (q.angles + step.tail<4>())
                   .cwiseMax(model.joint_limits.lower)
                   .cwiseMin(model.joint_limits.upper);
  }
  return {q, t};
}

}  // namespace jetvtol
