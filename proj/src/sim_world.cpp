#include "jetvtol/sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "jetvtol/rotation.hpp"

namespace jetvtol {

namespace {

constexpr double kContactFlagThreshold = 1.0;  // N

// Independent noise stream per (seed, tick, sensor).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tick, std::uint32_t sensor) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tick), static_cast<std::uint32_t>(tick >> 32), sensor};
  return std::mt19937_64(seq);
}

Vec3 gaussian3(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> g(0.0, 1.0);
  const double a = g(rng), b = g(rng), c = g(rng);
  return std * Vec3(a, b, c);
}

Quat perturb(const Quat& q, const Vec3& rotvec) { return rot::canonical(q * rot::quat_exp(rotvec)); }

}  // namespace

void SimParams::validate() const {
  model.validate();
  if (!(dt > 0.0)) throw DomainError("sim dt must be positive");
  if (!(servo_time_constant > 0.0)) throw DomainError("servo_time_constant must be positive");
  if (!(contact.stiffness >= 0.0 && contact.damping >= 0.0 && contact.friction_coeff >= 0.0 &&
        contact.friction_damping >= 0.0)) {
    throw DomainError("contact parameters must be non-negative");
  }
}

WorldState standing_world(const SimParams& p, const JointConfig& q) {
  WorldState w;
  double lowest = 0.0;
  for (const auto& foot : p.model.feet) {
    for (const auto& c : foot.contact_points) lowest = std::min(lowest, c.z());
  }
  w.base.position = Vec3(0.0, 0.0, -lowest);
  w.q = q;
  return w;
}

Vec3 truth_com(const WorldState& w, const RobotModel& model) {
  return w.base.position + w.base.orientation * model.base_to_com;
}

Vec3 truth_com_velocity(const WorldState& w, const RobotModel& model) {
  return w.base.lin_velocity + w.base.orientation * w.base.ang_velocity.cross(model.base_to_com);
}

Vec3 contact_force(double depth, double rate, double stiffness, double damping,
                   const Vec3& tangential_velocity, double friction_coeff, double friction_damping) {
  if (!(depth > 0.0)) return Vec3::Zero();
  const double normal = std::max(0.0, stiffness * depth + damping * rate);
  Vec3 vt = tangential_velocity;
  vt.z() = 0.0;
  Vec3 ft = -friction_damping * vt;
  const double cap = friction_coeff * normal;
  const double n = ft.norm();
  if (n > cap) ft *= cap / n;
  return Vec3(ft.x(), ft.y(), normal);
}

WorldWrench world_wrench(const WorldState& w, const SimParams& p) {
  const RobotModel& m = p.model;
  WorldWrench out;
  const Iso3 pose = w.base.pose();
  const Mat3 r = pose.linear();
  const Vec3 com = com_position(m, pose);
  Vec4 t;
  for (int i = 0; i < kNumJets; ++i) t(i) = w.jets[i].thrust;
  out.jets = allocation_matrix(m, w.q, pose, com) * t;
  out.gravity = Vec3(0.0, 0.0, -m.weight());

  const Vec3 omega_w = r * w.base.ang_velocity;
  for (int side = 0; side < 2; ++side) {
    for (const auto& c : m.feet[side].contact_points) {
      const Vec3 pw = pose * c;
      const Vec3 vw = w.base.lin_velocity + omega_w.cross(r * c);
      const Vec3 f = contact_force(-pw.z(), -vw.z(), p.contact.stiffness, p.contact.damping, vw,
                                   p.contact.friction_coeff, p.contact.friction_damping);
      out.foot_forces[side] += f;
      out.contact.head<3>() += f;
      out.contact.tail<3>() += (pw - com).cross(f);
    }
  }
  return out;
}

WorldState world_step(const WorldState& w, const ThrottleCommand& throttle, const Vec4& joint_ref,
                      const SimParams& p) {
  if (w.faulted) return w;
  const RobotModel& m = p.model;
  const double dt = p.dt;
  WorldState n = w;

  const WorldWrench wr = world_wrench(w, p);
  const Vec3 force = wr.jets.head<3>() + wr.contact.head<3>() + wr.gravity;
  const Vec3 torque_w = wr.jets.tail<3>() + wr.contact.tail<3>();

  // Translation of the CoM: exact for a force constant over the step.
  const Mat3 r = w.base.orientation.toRotationMatrix();
  const Vec3 c0 = truth_com(w, m);
  const Vec3 v0 = truth_com_velocity(w, m);
  const Vec3 v1 = v0 + dt * force / m.mass;
  const Vec3 c1 = c0 + 0.5 * dt * (v0 + v1);

  // Rotation: implicit midpoint in the body frame, keeps the kinetic energy
  // of a torque-free body.
  const Mat3& inertia = m.inertia_body;
  const Mat3 inertia_inv = inertia.inverse();
  const Vec3 tau_b = r.transpose() * torque_w;
  const Vec3 w0 = w.base.ang_velocity;
  Vec3 w1 = w0;
  for (int it = 0; it < 6; ++it) {
    const Vec3 wm = 0.5 * (w0 + w1);
    w1 = w0 + dt * inertia_inv * (tau_b - wm.cross(inertia * wm));
  }
  const Vec3 wm = 0.5 * (w0 + w1);
  const Quat q1 = (w.base.orientation * rot::quat_exp(dt * wm)).normalized();

  n.base.orientation = q1;
  n.base.ang_velocity = w1;
  n.base.position = c1 - q1 * m.base_to_com;
  n.base.lin_velocity = v1 - q1 * w1.cross(m.base_to_com);

  try {
    for (int i = 0; i < kNumJets; ++i) n.jets[i] = jet_step(w.jets[i], throttle.u(i), p.jets, dt);
  } catch (const std::exception&) {
    WorldState frozen = w;
    frozen.faulted = true;
    return frozen;
  }

  const double a = dt / p.servo_time_constant;
  n.q.angles = (w.q.angles + a * (joint_ref - w.q.angles))
                   .cwiseMax(m.joint_limits.lower)
                   .cwiseMin(m.joint_limits.upper);

  n.contact_forces = wr.foot_forces;
  n.tick = w.tick + 1;
  n.time = static_cast<double>(n.tick) * dt;

  const bool finite = n.base.position.allFinite() && n.base.lin_velocity.allFinite() &&
                      n.base.ang_velocity.allFinite() && n.base.orientation.coeffs().allFinite() &&
                      n.q.angles.allFinite();
  if (!finite) {
    WorldState frozen = w;
    frozen.faulted = true;
    return frozen;
  }
  return n;
}

bool ground_contact_flag(const WorldState& w) {
  return w.contact_forces[0].z() > kContactFlagThreshold || w.contact_forces[1].z() > kContactFlagThreshold;
}

void NoiseConfig::validate() const {
  const double s[] = {ft_force_std,     rpm_std,          imu_orientation_std, gyro_std,
                      vio_position_std, vio_orientation_std, vio_velocity_std, vio_ang_velocity_std};
  for (double v : s) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("noise standard deviations must be >= 0");
  }
  if (!(vio_latency >= 0.0)) throw DomainError("vio_latency must be >= 0");
  for (const auto& b : ft_bias) {
    if (!b.allFinite()) throw DomainError("ft_bias must be finite");
  }
}

NoiseConfig NoiseConfig::noiseless() {
  NoiseConfig n;
  n.ft_force_std = n.rpm_std = n.imu_orientation_std = n.gyro_std = 0.0;
  n.vio_position_std = n.vio_orientation_std = n.vio_velocity_std = n.vio_ang_velocity_std = 0.0;
  return n;
}

bool ft_due(std::uint64_t tick) { return tick % 10 == 0; }
bool imu_due(std::uint64_t tick) { return tick % 5 == 0; }
bool vio_due(std::uint64_t tick) { return tick == 0 || (tick * 3) / 100 != ((tick - 1) * 3) / 100; }

SensorSuite::SensorSuite(NoiseConfig noise, const SimParams& params)
    : noise_(noise), model_(params.model), rpm_map_(params.rpm_map) {
  noise_.validate();
}

SensorBatch SensorSuite::sample(const WorldState& w) {
  SensorBatch b;
  const std::uint64_t tick = w.tick;
  const auto latency_ticks = static_cast<std::uint64_t>(std::llround(noise_.vio_latency * 1000.0));
  history_.emplace_back(tick, w.base);
  while (history_.size() > latency_ticks + 1) history_.pop_front();

  if (ft_due(tick)) {
    auto rng = stream(noise_.seed, tick, 1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::array<FtReading, kNumJets> ft;
    std::array<RpmReading, kNumJets> rpm;
    for (int i = 0; i < kNumJets; ++i) {
      const JetMount& mount = model_.jets[i];
      ft[i].force = w.jets[i].thrust * mount.thrust_axis_local + noise_.ft_bias[i] +
                    gaussian3(rng, noise_.ft_force_std);
      ft[i].bias = noise_.ft_bias[i];
      const double rpm_noise = noise_.rpm_std * g(rng);
      rpm[i].rpm = std::clamp(rpm_map_.rpm_for_thrust(w.jets[i].thrust) + rpm_noise, 0.0, rpm_map_.max_rpm);
    }
    b.ft = ft;
    b.rpm = rpm;
  }
  if (imu_due(tick)) {
    auto rng = stream(noise_.seed, tick, 2);
    ImuSample s;
    s.t = w.time;
    s.orientation = perturb(w.base.orientation, gaussian3(rng, noise_.imu_orientation_std));
    s.ang_velocity = w.base.ang_velocity + gaussian3(rng, noise_.gyro_std);
    b.imu = s;
  }
  if (vio_due(tick)) {
    auto rng = stream(noise_.seed, tick, 3);
    const BaseState& past = history_.front().second;
    VioSample s;
    s.t = w.time;
    s.position = past.position + gaussian3(rng, noise_.vio_position_std);
    s.orientation = perturb(past.orientation, gaussian3(rng, noise_.vio_orientation_std));
    s.lin_velocity = past.lin_velocity + gaussian3(rng, noise_.vio_velocity_std);
    s.ang_velocity = past.ang_velocity + gaussian3(rng, noise_.vio_ang_velocity_std);
    b.vio = s;
  }
  return b;
}

}  // namespace jetvtol
