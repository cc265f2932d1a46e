#pragma once

// Base pose/velocity estimation fusing an IMU (orientation, gyro) and a
// VIO-like sensor (position, orientation, linear and angular velocity).
//
// Error-state formulation: the filter keeps a nominal BaseState and a 12-dim
// error covariance over (dp, dtheta, dv, domega). Rotation errors are local
// (right) perturbations: q = q_nominal * exp(dtheta). The generic UKF runs on
// the flat error vector; after each step the error mean is folded back into
// the nominal state and reset to zero.

#include <deque>
#include <mutex>
#include <optional>

#include "jetvtol/model_core.hpp"
#include "jetvtol/ukf.hpp"

namespace jetvtol {

struct BaseState {
  Vec3 position = Vec3::Zero();
  /// Orientation of the base frame in the world frame.
  Quat orientation = Quat::Identity();
  Vec3 lin_velocity = Vec3::Zero();  // world
  Vec3 ang_velocity = Vec3::Zero();  // body

  Iso3 pose() const;
  Vec3 euler_zyx() const;
};

struct ImuSample {
  double t = 0.0;
  Quat orientation = Quat::Identity();
  Vec3 ang_velocity = Vec3::Zero();
};

struct VioSample {
  /// Time the sample was delivered; it describes the state `latency` earlier.
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Vec3 lin_velocity = Vec3::Zero();
  Vec3 ang_velocity = Vec3::Zero();
};

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

struct PoseBelief {
  BaseState nominal;
  Mat12 covariance = Mat12::Identity();
};

struct PoseEstimatorConfig {
  double accel_std = 2.0;        // m/s^2, drives the velocity random walk
  double ang_accel_std = 2.0;    // rad/s^2
  double imu_orientation_std = 0.005;  // rad
  double imu_gyro_std = 0.01;          // rad/s
  double vio_position_std = 0.01;      // m
  double vio_orientation_std = 0.01;   // rad
  double vio_velocity_std = 0.02;      // m/s
  double vio_ang_velocity_std = 0.02;  // rad/s
  double vio_latency = 0.02;           // s
  double initial_position_std = 0.05;
  double initial_orientation_std = 0.05;
  double initial_velocity_std = 0.1;
  double initial_ang_velocity_std = 0.1;
  ukf::SigmaParams sigma{};

  Mat12 process_noise(double dt) const;
  Eigen::Matrix<double, 6, 6> imu_noise() const;
  Mat12 vio_noise() const;
  PoseBelief initial_belief(const BaseState& nominal) const;
};

/// Applies an error vector (dp, dtheta, dv, domega) to a nominal state.
BaseState retract(const BaseState& nominal, const Vec12& delta);
/// Inverse of retract.
Vec12 local_error(const BaseState& nominal, const BaseState& state);

/// Constant-velocity propagation: p += v*dt, q = q*exp(omega*dt).
BaseState propagate_base(const BaseState& s, double dt);

PoseBelief pose_predict(const PoseBelief& belief, double dt, const PoseEstimatorConfig& cfg);
PoseBelief pose_update_imu(const PoseBelief& belief, const ImuSample& sample,
                           const Eigen::Matrix<double, 6, 6>& r_imu,
                           const ukf::SigmaParams& sigma = {}, double* nis = nullptr);
PoseBelief pose_update_vio(const PoseBelief& belief, const VioSample& sample, const Mat12& r_vio,
                           double latency = 0.0, const ukf::SigmaParams& sigma = {},
                           double* nis = nullptr);

/// CoM = base position + R * base_to_com.
Vec3 estimated_com(const BaseState& base, const JointConfig& q, const RobotModel& model);

struct PoseEstimate {
  double t = 0.0;
  BaseState state;
  Vec12 covariance_diag = Vec12::Zero();
  double nis_imu = 0.0;
  double nis_vio = 0.0;
  bool vio_used = false;
};

/// 200 Hz fused estimator. VIO samples may be pushed from another thread;
/// each tick consumes at most one of them. A delayed sample is fused at the
/// time it describes and the later ticks are replayed on top of it.
class BasePoseEstimator {
 public:
  BasePoseEstimator(PoseEstimatorConfig cfg, const BaseState& initial, double t0 = 0.0);

  void push_vio(const VioSample& sample);
  /// Predict to `t`, fuse the IMU sample and at most one queued VIO sample.
  PoseEstimate tick(double t, const std::optional<ImuSample>& imu);

  PoseEstimate snapshot() const;
  const PoseBelief& belief() const { return belief_; }
  std::size_t queued_vio() const;

 private:
  PoseEstimatorConfig cfg_;
  PoseBelief belief_;
  PoseEstimate last_;
  double t_;
  struct Slot {
    double t;
    PoseBelief posterior;
    std::optional<ImuSample> imu;
  };
  std::deque<Slot> history_;
  void fuse_delayed(const VioSample& vio, PoseEstimate& est);
  mutable std::mutex queue_mutex_;
  std::deque<VioSample> vio_queue_;
};

}  // namespace jetvtol
