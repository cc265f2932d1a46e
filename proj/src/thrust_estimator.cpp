#include "jetvtol/thrust_estimator.hpp"

#include <algorithm>
#include <cmath>

namespace jetvtol {

namespace {

// Thrust floor used when converting RPM noise into thrust units.
constexpr double kMinThrustForRpmNoise = 1.0;

}  // namespace

double RpmMap::thrust(double rpm) const { return std::clamp(k2 * rpm * rpm, 0.0, kMaxThrust); }

double RpmMap::rpm_for_thrust(double t) const {
  return std::clamp(std::sqrt(std::max(t, 0.0) / k2), 0.0, max_rpm);
}

double RpmMap::slope_at_thrust(double t) const { return 2.0 * std::sqrt(k2 * std::max(t, 0.0)); }

double ft_to_thrust_intensity(const FtReading& reading, const JetMount& mount) {
  return reading.force.dot(mount.thrust_axis_local);
}

double rpm_to_thrust(const RpmReading& reading, const RpmMap& map) { return map.thrust(reading.rpm); }

ukf::GaussianBelief ThrustEstimatorConfig::initial_belief(double thrust) const {
  Eigen::Vector3d mean(thrust, 0.0, 0.0);
  Eigen::Vector3d var(initial_thrust_std * initial_thrust_std, initial_rate_std * initial_rate_std,
                      initial_bias_std * initial_bias_std);
  return {mean, MatX(var.asDiagonal())};
}

Eigen::Matrix3d ThrustEstimatorConfig::process_noise(double dt) const {
  // Acceleration noise integrated over one semi-implicit Euler step.
  const double qa = accel_noise_std * accel_noise_std * dt;
  Eigen::Matrix3d q = Eigen::Matrix3d::Zero();
  q(0, 0) = qa * dt * dt;
  q(0, 1) = q(1, 0) = qa * dt;
  q(1, 1) = qa;
  q(2, 2) = bias_walk_std * bias_walk_std * dt;
  return q;
}

ThrustEstimateStep thrust_estimate_step(const ukf::GaussianBelief& belief, double throttle,
                                        const FtReading& ft, const RpmReading& rpm,
                                        const JetMount& mount, const JetCoefficients& coeffs,
                                        const RpmMap& map, const ThrustEstimatorConfig& cfg,
                                        double dt) {
  const auto process = [&](const VecX& x, double h) {
    const JetState next = jet_step({x(0), x(1)}, throttle, coeffs, h);
    VecX y(3);
    y << next.thrust, next.thrust_rate, x(2);
    return y;
  };
  const auto predicted = ukf::ukf_predict(belief, process, cfg.process_noise(dt), dt, cfg.sigma);

  Eigen::Vector2d z(ft_to_thrust_intensity(ft, mount), rpm_to_thrust(rpm, map));
  const double t_hat = std::max(predicted.mean(0), kMinThrustForRpmNoise);
  // Squaring noisy RPM: mean shifts by k2 s^2, variance gains 2 k2^2 s^4.
  const double s2 = cfg.rpm_noise_std * cfg.rpm_noise_std;
  const double rpm_thrust_std = map.slope_at_thrust(t_hat) * cfg.rpm_noise_std;
  const double rpm_offset = map.k2 * s2;
  MatX r = MatX::Zero(2, 2);
  r(0, 0) = cfg.ft_noise_std * cfg.ft_noise_std;
  r(1, 1) = rpm_thrust_std * rpm_thrust_std + 2.0 * rpm_offset * rpm_offset;
  const auto h = [rpm_offset](const VecX& x) {
    VecX m(2);
    m << x(0) + x(2), x(0) + rpm_offset;
    return m;
  };
  const auto upd = ukf::ukf_update(predicted, z, h, r, cfg.sigma);

  ThrustEstimateStep out;
  out.belief = upd.belief;
  out.thrust = std::max(0.0, upd.belief.mean(0));
  out.nis_ft = upd.innovation(0) * upd.innovation(0) / upd.innovation_cov(0, 0);
  out.nis_rpm = upd.innovation(1) * upd.innovation(1) / upd.innovation_cov(1, 1);
  return out;
}

ThrustEstimator::ThrustEstimator(const RobotModel& model, JetCoefficients coeffs, RpmMap map,
                                 ThrustEstimatorConfig cfg, const Vec4& initial_thrust)
    : mounts_(model.jets), coeffs_(coeffs), map_(map), cfg_(std::move(cfg)) {
  for (int i = 0; i < kNumJets; ++i) {
    beliefs_[static_cast<std::size_t>(i)] = cfg_.initial_belief(initial_thrust(i));
    estimate_.thrust(i) = initial_thrust(i);
  }
}

const ThrustEstimate& ThrustEstimator::step(const ThrottleCommand& throttle,
                                            const std::array<FtReading, kNumJets>& ft,
                                            const std::array<RpmReading, kNumJets>& rpm, double dt) {
  for (int i = 0; i < kNumJets; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto s = thrust_estimate_step(beliefs_[k], throttle.u(i), ft[k], rpm[k], mounts_[k], coeffs_,
                                        map_, cfg_, dt);
    beliefs_[k] = s.belief;
    estimate_.thrust(i) = s.thrust;
    estimate_.thrust_rate(i) = s.belief.mean(1);
    estimate_.bias(i) = s.belief.mean(2);
    estimate_.cov_trace(i) = s.belief.covariance.trace();
    estimate_.nis_ft(i) = s.nis_ft;
    estimate_.nis_rpm(i) = s.nis_rpm;
  }
  return estimate_;
}

}  // namespace jetvtol
