#include "jetvtol/base_pose_estimator.hpp"

#include <algorithm>
#include <cmath>

#include "jetvtol/rotation.hpp"

namespace jetvtol {

namespace {

constexpr double kQuatNormTolerance = 1e-6;
// Ticks kept beyond the VIO latency for replaying delayed samples, s.
constexpr double kHistorySpan = 0.1;

Quat renormalized(const Quat& q) {
  Quat n = rot::canonical(q);
  if (std::abs(n.norm() - 1.0) > kQuatNormTolerance) throw NumericError("quaternion norm drift after renormalization");
  return n;
}

VecX to_dyn(const Vec12& v) { return VecX(v); }

// Folds the posterior error mean into the nominal state.
PoseBelief fold(const BaseState& nominal, const ukf::GaussianBelief& b) {
  PoseBelief out;
  out.nominal = retract(nominal, b.mean);
  out.covariance = b.covariance;
  return out;
}

ukf::GaussianBelief as_error_belief(const PoseBelief& b) { return {VecX::Zero(12), MatX(b.covariance)}; }

}  // namespace

Iso3 BaseState::pose() const {
  Iso3 iso = Iso3::Identity();
  iso.linear() = orientation.toRotationMatrix();
  iso.translation() = position;
  return iso;
}

Vec3 BaseState::euler_zyx() const { return rot::matrix_to_euler_zyx(orientation.toRotationMatrix()); }

Mat12 PoseEstimatorConfig::process_noise(double dt) const {
  Mat12 q = Mat12::Zero();
  const double qa = accel_std * accel_std;
  const double qw = ang_accel_std * ang_accel_std;
  for (int i = 0; i < 3; ++i) {
    // position / linear velocity
    q(i, i) = qa * dt * dt * dt / 3.0;
    q(i, 6 + i) = q(6 + i, i) = qa * dt * dt / 2.0;
    q(6 + i, 6 + i) = qa * dt;
    // attitude / angular velocity
    q(3 + i, 3 + i) = qw * dt * dt * dt / 3.0;
    q(3 + i, 9 + i) = q(9 + i, 3 + i) = qw * dt * dt / 2.0;
    q(9 + i, 9 + i) = qw * dt;
  }
  return q;
}

Eigen::Matrix<double, 6, 6> PoseEstimatorConfig::imu_noise() const {
  Eigen::Matrix<double, 6, 1> d;
  d << Vec3::Constant(imu_orientation_std * imu_orientation_std), Vec3::Constant(imu_gyro_std * imu_gyro_std);
  return d.asDiagonal();
}

Mat12 PoseEstimatorConfig::vio_noise() const {
  Vec12 d;
  d << Vec3::Constant(vio_position_std * vio_position_std),
      Vec3::Constant(vio_orientation_std * vio_orientation_std),
      Vec3::Constant(vio_velocity_std * vio_velocity_std),
      Vec3::Constant(vio_ang_velocity_std * vio_ang_velocity_std);
  return d.asDiagonal();
}

PoseBelief PoseEstimatorConfig::initial_belief(const BaseState& nominal) const {
  Vec12 d;
  d << Vec3::Constant(initial_position_std * initial_position_std),
      Vec3::Constant(initial_orientation_std * initial_orientation_std),
      Vec3::Constant(initial_velocity_std * initial_velocity_std),
      Vec3::Constant(initial_ang_velocity_std * initial_ang_velocity_std);
  PoseBelief b;
  b.nominal = nominal;
  b.nominal.orientation = rot::canonical(nominal.orientation);
  b.covariance = d.asDiagonal();
  return b;
}

BaseState retract(const BaseState& nominal, const Vec12& d) {
  BaseState s;
  s.position = nominal.position + d.segment<3>(0);
  s.orientation = renormalized(nominal.orientation * rot::quat_exp(d.segment<3>(3)));
  s.lin_velocity = nominal.lin_velocity + d.segment<3>(6);
  s.ang_velocity = nominal.ang_velocity + d.segment<3>(9);
  return s;
}

Vec12 local_error(const BaseState& nominal, const BaseState& state) {
  Vec12 d;
  d.segment<3>(0) = state.position - nominal.position;
  d.segment<3>(3) = rot::quat_log(nominal.orientation.conjugate() * state.orientation);
  d.segment<3>(6) = state.lin_velocity - nominal.lin_velocity;
  d.segment<3>(9) = state.ang_velocity - nominal.ang_velocity;
  return d;
}

BaseState propagate_base(const BaseState& s, double dt) {
  BaseState n = s;
  n.position = s.position + s.lin_velocity * dt;
  n.orientation = renormalized(s.orientation * rot::quat_exp(s.ang_velocity * dt));
  return n;
}

PoseBelief pose_predict(const PoseBelief& belief, double dt, const PoseEstimatorConfig& cfg) {
  if (!(dt > 0.0)) throw DomainError("pose_predict: dt must be positive");
  const BaseState nominal_next = propagate_base(belief.nominal, dt);
  const auto process = [&](const VecX& delta, double h) {
    const BaseState s = retract(belief.nominal, delta);
    return to_dyn(local_error(nominal_next, propagate_base(s, h)));
  };
  const auto predicted =
      ukf::ukf_predict(as_error_belief(belief), process, MatX(cfg.process_noise(dt)), dt, cfg.sigma);
  // The nominal follows the noise-free model; the unscented mean shift is
  // kept as spread about it rather than folded in, so an unobserved belief
  // does not drift away from constant-velocity motion.
  PoseBelief out;
  out.nominal = nominal_next;
  out.covariance = predicted.covariance + predicted.mean * predicted.mean.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

PoseBelief pose_update_imu(const PoseBelief& belief, const ImuSample& sample,
                           const Eigen::Matrix<double, 6, 6>& r_imu, const ukf::SigmaParams& sigma,
                           double* nis) {
  const BaseState& nom = belief.nominal;
  VecX z(6);
  z << rot::quat_log(nom.orientation.conjugate() * sample.orientation), sample.ang_velocity;
  const auto h = [&](const VecX& delta) {
    const BaseState s = retract(nom, delta);
    VecX m(6);
    m << rot::quat_log(nom.orientation.conjugate() * s.orientation), s.ang_velocity;
    return m;
  };
  const auto upd = ukf::ukf_update(as_error_belief(belief), z, h, MatX(r_imu), sigma);
  if (nis != nullptr) *nis = upd.nis;
  return fold(nom, upd.belief);
}

PoseBelief pose_update_vio(const PoseBelief& belief, const VioSample& sample, const Mat12& r_vio,
                           double latency, const ukf::SigmaParams& sigma, double* nis) {
  const BaseState& nom = belief.nominal;
  VecX z(12);
  z << sample.position, rot::quat_log(nom.orientation.conjugate() * sample.orientation),
      sample.lin_velocity, sample.ang_velocity;
  // The sample describes the state `latency` seconds ago; predict it back with
  // the constant-velocity model.
  const auto h = [&](const VecX& delta) {
    const BaseState s = retract(nom, delta);
    const Quat past = s.orientation * rot::quat_exp(-latency * s.ang_velocity);
    VecX m(12);
    m << s.position - latency * s.lin_velocity, rot::quat_log(nom.orientation.conjugate() * past),
        s.lin_velocity, s.ang_velocity;
    return m;
  };
  const auto upd = ukf::ukf_update(as_error_belief(belief), z, h, MatX(r_vio), sigma);
  if (nis != nullptr) *nis = upd.nis;
  return fold(nom, upd.belief);
}

Vec3 estimated_com(const BaseState& base, const JointConfig& q, const RobotModel& model) {
  (void)q;  // the reduced model keeps the CoM fixed in the base frame
  return base.position + base.orientation * model.base_to_com;
}

BasePoseEstimator::BasePoseEstimator(PoseEstimatorConfig cfg, const BaseState& initial, double t0)
    : cfg_(std::move(cfg)), belief_(cfg_.initial_belief(initial)), t_(t0) {
  last_.t = t0;
  last_.state = belief_.nominal;
  last_.covariance_diag = belief_.covariance.diagonal();
  history_.push_back({t0, belief_, std::nullopt});
}

void BasePoseEstimator::push_vio(const VioSample& sample) {
  std::lock_guard lock(queue_mutex_);
  vio_queue_.push_back(sample);
}

std::size_t BasePoseEstimator::queued_vio() const {
  std::lock_guard lock(queue_mutex_);
  return vio_queue_.size();
}

void BasePoseEstimator::fuse_delayed(const VioSample& vio, PoseEstimate& est) {
  constexpr double kEps = 1e-9;
  const double tm = vio.t - cfg_.vio_latency;
  auto it = std::upper_bound(history_.begin(), history_.end(), tm + kEps,
                             [](double t, const Slot& s) { return t < s.t; });
  if (it == history_.begin()) {
    // Older than the history: fuse now, retrodicting with the motion model.
    const double age = std::max(0.0, t_ - tm);
    const Mat12 r = cfg_.vio_noise() + cfg_.process_noise(age);
    belief_ = pose_update_vio(belief_, vio, r, age, cfg_.sigma, &est.nis_vio);
    history_.back().posterior = belief_;
    return;
  }
  --it;
  PoseBelief b = it->posterior;
  if (tm - it->t > kEps) {
    b = pose_predict(b, tm - it->t, cfg_);
    it = history_.insert(it + 1, Slot{tm, b, std::nullopt});
  }
  b = pose_update_vio(b, vio, cfg_.vio_noise(), 0.0, cfg_.sigma, &est.nis_vio);
  it->posterior = b;
  double t_prev = it->t;
  for (++it; it != history_.end(); ++it) {
    b = pose_predict(b, it->t - t_prev, cfg_);
    if (it->imu) b = pose_update_imu(b, *it->imu, cfg_.imu_noise(), cfg_.sigma);
    it->posterior = b;
    t_prev = it->t;
  }
  belief_ = b;
}

PoseEstimate BasePoseEstimator::tick(double t, const std::optional<ImuSample>& imu) {
  const double dt = t - t_;
  if (dt > 0.0) belief_ = pose_predict(belief_, dt, cfg_);
  t_ = t;
  PoseEstimate est;
  est.t = t;
  if (imu) belief_ = pose_update_imu(belief_, *imu, cfg_.imu_noise(), cfg_.sigma, &est.nis_imu);
  if (dt > 0.0) {
    history_.push_back({t, belief_, imu});
  } else {
    history_.back() = {t, belief_, imu};
  }
  while (history_.size() > 1 && history_[1].t < t - cfg_.vio_latency - kHistorySpan) history_.pop_front();
  std::optional<VioSample> vio;
  {
    std::lock_guard lock(queue_mutex_);
    if (!vio_queue_.empty()) {
      vio = vio_queue_.front();
      vio_queue_.pop_front();
    }
  }
  if (vio) {
    fuse_delayed(*vio, est);
    est.vio_used = true;
  }
  est.state = belief_.nominal;
  est.covariance_diag = belief_.covariance.diagonal();
  last_ = est;
  return est;
}

PoseEstimate BasePoseEstimator::snapshot() const { return last_; }

}  // namespace jetvtol
