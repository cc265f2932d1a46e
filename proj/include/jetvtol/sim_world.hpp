#pragma once

// Fixed-step floating-base simulation: turbines, first-order joint servos,
// penalty foot contact and noisy sensor synthesis.

#include <cstdint>
#include <deque>
#include <optional>

#include "jetvtol/base_pose_estimator.hpp"
#include "jetvtol/jet_dynamics.hpp"
#include "jetvtol/model_core.hpp"
#include "jetvtol/thrust_estimator.hpp"

namespace jetvtol {

struct ContactParams {
  double stiffness = 1e5;         // N/m per contact point
  double damping = 1000.0;        // N*s/m per contact point
  double friction_coeff = 0.8;
  double friction_damping = 100.0;  // N*s/m, tangential viscous gain before the Coulomb cap
};

struct SimParams {
  RobotModel model = reference_robot_model();
  JetCoefficients jets = reference_jet_coefficients();
  RpmMap rpm_map{};
  ContactParams contact{};
  double servo_time_constant = 0.05;  // s
  double dt = 0.001;                  // s

  void validate() const;
};

struct WorldState {
  BaseState base;
  std::array<JetState, kNumJets> jets{};
  JointConfig q;
  double time = 0.0;
  std::uint64_t tick = 0;
  /// Net contact force per foot from the last step, world frame.
  std::array<Vec3, 2> contact_forces{Vec3::Zero(), Vec3::Zero()};
  bool faulted = false;
};

/// Robot standing on flat ground (z = 0) with its feet just touching.
WorldState standing_world(const SimParams& p, const JointConfig& q);

Vec3 truth_com(const WorldState& w, const RobotModel& model);
Vec3 truth_com_velocity(const WorldState& w, const RobotModel& model);

/// Penalty contact at one point. depth > 0 means penetration; rate is
/// d(depth)/dt. Normal force is never pulling; friction is viscous, capped
/// at friction_coeff times the normal force.
Vec3 contact_force(double depth, double rate, double stiffness, double damping,
                   const Vec3& tangential_velocity = Vec3::Zero(), double friction_coeff = 0.8,
                   double friction_damping = 100.0);

/// Total external wrench about the CoM (jets + gravity + contacts) and the
/// per-foot contact forces, at the given state.
struct WorldWrench {
  Vec6 jets = Vec6::Zero();
  Vec6 contact = Vec6::Zero();
  Vec3 gravity = Vec3::Zero();
  std::array<Vec3, 2> foot_forces{Vec3::Zero(), Vec3::Zero()};
};
WorldWrench world_wrench(const WorldState& w, const SimParams& p);

/// One step. A non-finite result returns the input state with `faulted` set.
WorldState world_step(const WorldState& w, const ThrottleCommand& throttle, const Vec4& joint_ref,
                      const SimParams& p);

/// True iff either foot's normal force exceeds 1 N.
bool ground_contact_flag(const WorldState& w);

struct NoiseConfig {
  double ft_force_std = 2.0;            // N
  double rpm_std = 2000.0;              // rev/min
  double imu_orientation_std = 0.005;   // rad
  double gyro_std = 0.01;               // rad/s
  double vio_position_std = 0.01;       // m
  double vio_orientation_std = 0.01;    // rad
  double vio_velocity_std = 0.02;       // m/s
  double vio_ang_velocity_std = 0.02;   // rad/s
  double vio_latency = 0.02;            // s
  /// Constant FT force bias per turbine, sensor frame.
  std::array<Vec3, kNumJets> ft_bias{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::uint64_t seed = 1;

  void validate() const;
  static NoiseConfig noiseless();
};

struct SensorBatch {
  std::optional<std::array<FtReading, kNumJets>> ft;
  std::optional<std::array<RpmReading, kNumJets>> rpm;
  std::optional<ImuSample> imu;
  std::optional<VioSample> vio;
};

/// Tick schedule at 1 kHz: FT/RPM every 10th tick, IMU every 5th, VIO 30
/// times per second.
bool ft_due(std::uint64_t tick);
bool imu_due(std::uint64_t tick);
bool vio_due(std::uint64_t tick);

/// Sensor synthesis. Noise for a given (seed, tick) does not depend on the
/// call history; VIO samples describe the truth `vio_latency` earlier, so
/// the suite keeps a short truth history and must see every tick.
class SensorSuite {
 public:
  SensorSuite(NoiseConfig noise, const SimParams& params);

  SensorBatch sample(const WorldState& w);

 private:
  NoiseConfig noise_;
  RobotModel model_;
  RpmMap rpm_map_;
  std::deque<std::pair<std::uint64_t, BaseState>> history_;
};

}  // namespace jetvtol
