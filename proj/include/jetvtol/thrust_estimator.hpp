#pragma once

// Per-turbine thrust estimation. Each turbine runs its own 3-state UKF over
// (thrust, thrust rate, FT axis bias) with the second-order jet model as the
// process and two scalar measurements: the FT force projected on the thrust
// axis (thrust + bias) and the RPM-derived thrust (thrust).

#include "jetvtol/jet_dynamics.hpp"
#include "jetvtol/model_core.hpp"
#include "jetvtol/ukf.hpp"

namespace jetvtol {

struct FtReading {
  Vec3 force = Vec3::Zero();   // N, nozzle (sensor) frame
  Vec3 torque = Vec3::Zero();  // N*m
  /// Ground-truth bias injected by the simulator. Never read by the estimator.
  Vec3 bias = Vec3::Zero();
};

struct RpmReading {
  double rpm = 0.0;
};

/// Static map thrust = k2 * rpm^2, clamped to [0, kMaxThrust].
struct RpmMap {
  double max_rpm = 130000.0;
  double k2 = kMaxThrust / (130000.0 * 130000.0);

  double thrust(double rpm) const;
  /// Inverse map, used to synthesise readings.
  double rpm_for_thrust(double thrust) const;
  /// d thrust / d rpm at a given thrust.
  double slope_at_thrust(double thrust) const;
};

/// Force component along the mount's thrust axis. Torque is ignored.
double ft_to_thrust_intensity(const FtReading& reading, const JetMount& mount);

double rpm_to_thrust(const RpmReading& reading, const RpmMap& map);

struct ThrustEstimatorConfig {
  double ft_noise_std = 2.0;        // N
  double rpm_noise_std = 2000.0;    // rev/min
  double accel_noise_std = 20.0;    // N/s^2, white noise on thrust acceleration
  double bias_walk_std = 0.05;      // N/sqrt(s)
  double initial_thrust_std = 5.0;  // N
  double initial_rate_std = 5.0;    // N/s
  double initial_bias_std = 8.0;    // N
  ukf::SigmaParams sigma{};

  ukf::GaussianBelief initial_belief(double thrust) const;
  /// Discrete process noise for one step of length dt.
  Eigen::Matrix3d process_noise(double dt) const;
};

struct ThrustEstimateStep {
  ukf::GaussianBelief belief;
  double thrust = 0.0;  // point estimate, >= 0
  double nis_ft = 0.0;
  double nis_rpm = 0.0;
};

/// One predict + update cycle of a single turbine filter.
ThrustEstimateStep thrust_estimate_step(const ukf::GaussianBelief& belief, double throttle,
                                        const FtReading& ft, const RpmReading& rpm,
                                        const JetMount& mount, const JetCoefficients& coeffs,
                                        const RpmMap& map, const ThrustEstimatorConfig& cfg,
                                        double dt);

struct ThrustEstimate {
  Vec4 thrust = Vec4::Zero();
  Vec4 thrust_rate = Vec4::Zero();
  Vec4 bias = Vec4::Zero();
  Vec4 cov_trace = Vec4::Zero();
  Vec4 nis_ft = Vec4::Zero();
  Vec4 nis_rpm = Vec4::Zero();
};

/// Four independent turbine filters. Single writer.
class ThrustEstimator {
 public:
  ThrustEstimator(const RobotModel& model, JetCoefficients coeffs, RpmMap map,
                  ThrustEstimatorConfig cfg, const Vec4& initial_thrust);

  const ThrustEstimate& step(const ThrottleCommand& throttle, const std::array<FtReading, kNumJets>& ft,
                             const std::array<RpmReading, kNumJets>& rpm, double dt);

  const ThrustEstimate& estimate() const { return estimate_; }
  const ukf::GaussianBelief& belief(int jet) const { return beliefs_[static_cast<std::size_t>(jet)]; }

 private:
  std::array<JetMount, kNumJets> mounts_;
  JetCoefficients coeffs_;
  RpmMap map_;
  ThrustEstimatorConfig cfg_;
  std::array<ukf::GaussianBelief, kNumJets> beliefs_;
  ThrustEstimate estimate_;
};

}  // namespace jetvtol
