#pragma once

#include "jetvtol/common.hpp"

namespace jetvtol::rot {

Mat3 skew(const Vec3& v);

Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);

/// Derivatives of the elementary rotations with respect to their angle.
Mat3 drot_x(double a);
Mat3 drot_y(double a);
Mat3 drot_z(double a);

/// R = Rz(yaw) * Ry(pitch) * Rx(roll); euler = (yaw, pitch, roll).
Mat3 euler_zyx_to_matrix(const Vec3& euler);
Vec3 matrix_to_euler_zyx(const Mat3& r);

/// Partial derivative of euler_zyx_to_matrix with respect to component `i`.
Mat3 euler_zyx_partial(const Vec3& euler, int i);

/// Maps Euler rates to world-frame angular velocity: omega_w = M(euler) * euler_dot.
Mat3 euler_rate_to_world_omega(const Vec3& euler);
Mat3 euler_rate_to_world_omega_partial(const Vec3& euler, int i);

/// Rotation vector <-> unit quaternion.
Quat quat_exp(const Vec3& rotvec);
Vec3 quat_log(const Quat& q);

/// Unit-norm, scalar part >= 0.
Quat canonical(const Quat& q);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

}  // namespace jetvtol::rot
