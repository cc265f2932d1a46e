#include "jetvtol/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace jetvtol::rot {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s,
       0, 1, 0,
       -s, 0, c;
  return m;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0,
       s, c, 0,
       0, 0, 1;
  return m;
}

Mat3 drot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 0, 0, 0,
       0, -s, -c,
       0, c, -s;
  return m;
}

Mat3 drot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, 0, c,
       0, 0, 0,
       -c, 0, -s;
  return m;
}

Mat3 drot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, -c, 0,
       c, -s, 0,
       0, 0, 0;
  return m;
}

Mat3 euler_zyx_to_matrix(const Vec3& e) {
  return rot_z(e(0)) * rot_y(e(1)) * rot_x(e(2));
}

Vec3 matrix_to_euler_zyx(const Mat3& r) {
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  return {yaw, pitch, roll};
}

Mat3 euler_zyx_partial(const Vec3& e, int i) {
  switch (i) {
    case 0: return drot_z(e(0)) * rot_y(e(1)) * rot_x(e(2));
    case 1: return rot_z(e(0)) * drot_y(e(1)) * rot_x(e(2));
    default: return rot_z(e(0)) * rot_y(e(1)) * drot_x(e(2));
  }
}

// Columns: z axis, yawed y axis, yawed-and-pitched x axis.
Mat3 euler_rate_to_world_omega(const Vec3& e) {
  const double cy = std::cos(e(0)), sy = std::sin(e(0));
  const double cp = std::cos(e(1)), sp = std::sin(e(1));
  Mat3 m;
  m << 0, -sy, cy * cp,
       0, cy, sy * cp,
       1, 0, -sp;
  return m;
}

Mat3 euler_rate_to_world_omega_partial(const Vec3& e, int i) {
  const double cy = std::cos(e(0)), sy = std::sin(e(0));
  const double cp = std::cos(e(1)), sp = std::sin(e(1));
  Mat3 m = Mat3::Zero();
  if (i == 0) {
    m << 0, -cy, -sy * cp,
         0, -sy, cy * cp,
         0, 0, 0;
  } else if (i == 1) {
    m << 0, 0, -cy * sp,
         0, 0, -sy * sp,
         0, 0, -cp;
  }
  return m;
}

Quat quat_exp(const Vec3& v) {
  const double angle = v.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z());
    return q.normalized();
  }
  return Quat(Eigen::AngleAxisd(angle, v / angle));
}

Vec3 quat_log(const Quat& qin) {
  const Quat q = canonical(qin);
  const double vn = q.vec().norm();
  if (vn < 1e-12) return 2.0 * q.vec();
  const double angle = 2.0 * std::atan2(vn, q.w());
  return angle * q.vec() / vn;
}

Quat canonical(const Quat& qin) {
  Quat q = qin.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a <= 0.0) a += two_pi;
  return a - std::numbers::pi;
}

}  // namespace jetvtol::rot
