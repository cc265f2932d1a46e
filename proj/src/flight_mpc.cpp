#include "jetvtol/flight_mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "jetvtol/rotation.hpp"

namespace jetvtol {

namespace mi = mpc_index;

namespace {

constexpr double kPi = std::numbers::pi;

// Prediction may wander slightly past the joint limits (the QP constrains
// them); kinematics are evaluated on a copy without the limit check.
RobotModel unlimited(const RobotModel& m) {
  RobotModel out = m;
  out.joint_limits.lower = Vec4::Constant(-kPi);
  out.joint_limits.upper = Vec4::Constant(kPi);
  return out;
}

struct Kinematics {
  Mat3 r;
  Iso3 base = Iso3::Identity();
  Vec3 com;
  AllocationMatrix alloc;
};

Kinematics kinematics(const RobotModel& m, const Vec3& euler, const Vec4& q) {
  Kinematics k;
  k.r = rot::euler_zyx_to_matrix(euler);
  k.base.linear() = k.r;
  k.com = com_position(m, k.base);
  k.alloc = allocation_matrix(m, JointConfig{q}, k.base, k.com);
  return k;
}

void check_pitch(const Vec3& euler, double guard) {
  if (!std::isfinite(euler(1)) || std::abs(euler(1)) > kPi / 2.0 - guard) {
    std::ostringstream os;
    os << "pitch " << euler(1) << " rad inside the singularity guard band";
    throw SingularityError(os.str());
  }
}

}  // namespace

MpcVec MpcState::to_vector() const {
  MpcVec v;
  v.segment<3>(mi::com) = centroidal.com_position;
  v.segment<3>(mi::lin_momentum) = centroidal.lin_momentum;
  v.segment<3>(mi::euler) = centroidal.euler_zyx;
  v.segment<3>(mi::ang_momentum) = centroidal.ang_momentum;
  for (int i = 0; i < kNumJets; ++i) {
    v(mi::thrust + i) = jets[i].thrust;
    v(mi::thrust_rate + i) = jets[i].thrust_rate;
  }
  v.segment<4>(mi::joints) = q.angles;
  return v;
}

MpcState MpcState::from_vector(const MpcVec& v) {
  MpcState s;
  s.centroidal.com_position = v.segment<3>(mi::com);
  s.centroidal.lin_momentum = v.segment<3>(mi::lin_momentum);
  s.centroidal.euler_zyx = v.segment<3>(mi::euler);
  s.centroidal.ang_momentum = v.segment<3>(mi::ang_momentum);
  for (int i = 0; i < kNumJets; ++i) {
    s.jets[i].thrust = v(mi::thrust + i);
    s.jets[i].thrust_rate = v(mi::thrust_rate + i);
  }
  s.q.angles = v.segment<4>(mi::joints);
  return s;
}

MpcParams MpcParams::for_model(const RobotModel& model) {
  MpcParams p;
  p.joint_limits = model.joint_limits;
  return p;
}

void MpcParams::validate() const {
  if (horizon_steps < 2) throw DomainError("horizon_steps must be at least 2");
  if (!(dt_coarse > 0.0)) throw DomainError("dt_coarse must be positive");
  const auto& w = weights;
  const bool nonneg = (w.com_position.array() >= 0.0).all() && (w.euler.array() >= 0.0).all() &&
                      (w.lin_momentum.array() >= 0.0).all() && (w.ang_momentum.array() >= 0.0).all() &&
                      (w.throttle_effort.array() >= 0.0).all() && (w.joint_rate.array() >= 0.0).all() &&
                      w.joint_posture >= 0.0 && w.throttle_change >= 0.0 && w.terminal_scale >= 0.0;
  if (!nonneg) throw DomainError("MPC weights must be non-negative");
  if (!(throttle_min >= 0.0 && throttle_min < throttle_max && throttle_max <= kMaxThrottle)) {
    throw DomainError("throttle bounds must satisfy 0 <= min < max <= 100");
  }
  if (!(throttle_rate_max > 0.0)) throw DomainError("throttle_rate_max must be positive");
  if (!(joint_rate_max > 0.0)) throw DomainError("joint_rate_max must be positive");
  if (!(pitch_guard > 0.0 && pitch_guard < kPi / 2.0)) throw DomainError("pitch_guard must lie in (0, pi/2)");
  if (!(shutdown_orientation_limit > 0.0)) throw DomainError("shutdown_orientation_limit must be positive");
  if (!(max_estimate_age > 0.0)) throw DomainError("max_estimate_age must be positive");
  for (int i = 0; i < kNumJoints; ++i) {
    if (joint_limits.lower(i) > joint_limits.upper(i)) throw DomainError("joint limits inverted");
  }
}

const char* to_string(FlightPhase p) {
  switch (p) {
    case FlightPhase::Idle: return "Idle";
    case FlightPhase::Spool: return "Spool";
    case FlightPhase::Ramp: return "Ramp";
    case FlightPhase::Airborne: return "Airborne";
    case FlightPhase::Shutdown: return "Shutdown";
  }
  return "?";
}

std::optional<FlightPhase> flight_phase_from_string(const std::string& s) {
  for (auto p : {FlightPhase::Idle, FlightPhase::Spool, FlightPhase::Ramp, FlightPhase::Airborne,
                 FlightPhase::Shutdown}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

bool phase_transition_allowed(FlightPhase from, FlightPhase to) {
  if (to == FlightPhase::Shutdown) return true;
  return static_cast<int>(to) == static_cast<int>(from) + 1 && from != FlightPhase::Shutdown;
}

double orientation_error(const Vec3& euler, const Vec3& euler_ref) {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(rot::wrap_angle(euler(i) - euler_ref(i))));
  return worst;
}

TakeoffSchedule advance_schedule(const TakeoffSchedule& schedule, const MpcState& x_estimated,
                                 const Vec3& euler_ref, bool ground_contact, double dt,
                                 double shutdown_orientation_limit) {
  TakeoffSchedule s = schedule;
  if (s.phase == FlightPhase::Shutdown) return s;
  if (s.phase == FlightPhase::Ramp || s.phase == FlightPhase::Airborne) {
    if (orientation_error(x_estimated.centroidal.euler_zyx, euler_ref) > shutdown_orientation_limit) {
      s.phase = FlightPhase::Shutdown;
      return s;
    }
  }
  if (s.phase == FlightPhase::Ramp) {
    s.alpha = std::min(1.0, s.alpha + s.ramp_rate * dt);
    if (s.alpha >= 1.0 && !ground_contact) s.phase = FlightPhase::Airborne;
  }
  return s;
}

ReferenceTrajectory ReferenceTrajectory::hold(const Vec3& com, const Vec3& euler) {
  ReferenceTrajectory r;
  r.times = {0.0};
  r.com = {com};
  r.euler = euler;
  return r;
}

void ReferenceTrajectory::validate() const {
  if (times.empty() || times.size() != com.size()) throw DomainError("reference needs matching knots");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || !com[i].allFinite()) throw DomainError("reference must be finite");
    if (i > 0 && !(times[i] > times[i - 1])) throw DomainError("reference times must increase strictly");
  }
  if (!euler.allFinite()) throw DomainError("reference orientation must be finite");
}

Vec3 ReferenceTrajectory::com_at(double t) const {
  if (times.empty()) throw DomainError("empty reference");
  if (t <= times.front()) return com.front();
  if (t >= times.back()) return com.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin());
  const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
  return (1.0 - w) * com[i - 1] + w * com[i];
}

void ReferenceTrajectory::append(double t, const Vec3& c) {
  const Vec3 here = com_at(t);
  while (!times.empty() && times.back() >= t) {
    times.pop_back();
    com.pop_back();
  }
  if (times.empty() || times.back() < t) {
    times.push_back(t);
    com.push_back(here);
  }
  times.push_back(t + 1e-3);
  com.push_back(c);
}

MpcVec prediction_rhs(const RobotModel& model, const JetCoefficients& coeffs, const MpcVec& x,
                      const MpcInput& u, double alpha) {
  const RobotModel m = unlimited(model);
  const Vec3 e = x.segment<3>(mi::euler);
  const Kinematics k = kinematics(m, e, x.segment<4>(mi::joints));
  const Vec4 t = x.segment<4>(mi::thrust);
  const Vec6 w = k.alloc * t;

  MpcVec f;
  f.segment<3>(mi::com) = x.segment<3>(mi::lin_momentum) / m.mass;
  f.segment<3>(mi::lin_momentum) = w.head<3>();
  f(mi::lin_momentum + 2) -= alpha * m.weight();
  const Vec3 omega = k.r * m.inertia_body.inverse() * k.r.transpose() * x.segment<3>(mi::ang_momentum);
  f.segment<3>(mi::euler) = rot::euler_rate_to_world_omega(e).inverse() * omega;
  f.segment<3>(mi::ang_momentum) = w.tail<3>();
  for (int i = 0; i < kNumJets; ++i) {
    const JetState js{x(mi::thrust + i), x(mi::thrust_rate + i)};
    f(mi::thrust + i) = js.thrust_rate;
    f(mi::thrust_rate + i) = jet_acceleration(js, u(i), coeffs);
  }
  f.segment<4>(mi::joints) = u.tail<4>();
  return f;
}

std::pair<MpcStateMatrix, MpcInputMatrix> prediction_jacobians(const RobotModel& model,
                                                               const JetCoefficients& coeffs,
                                                               const MpcVec& x, const MpcInput& u,
                                                               double /*alpha*/) {
  const RobotModel m = unlimited(model);
  const Vec3 e = x.segment<3>(mi::euler);
  const Vec4 q = x.segment<4>(mi::joints);
  const Vec4 t = x.segment<4>(mi::thrust);
  const Vec3 h = x.segment<3>(mi::ang_momentum);
  const Kinematics k = kinematics(m, e, q);
  const Vec6 w = k.alloc * t;
  const Mat6x4 dq = linearize_allocation(m, JointConfig{q}, k.base, k.com, t);
  const Mat3 i_inv = m.inertia_body.inverse();
  const Mat3 em = rot::euler_rate_to_world_omega(e);
  const Mat3 em_inv = em.inverse();
  const Vec3 omega = k.r * i_inv * k.r.transpose() * h;

  MpcStateMatrix jx = MpcStateMatrix::Zero();
  MpcInputMatrix ju = MpcInputMatrix::Zero();

  jx.block<3, 3>(mi::com, mi::lin_momentum) = Mat3::Identity() / m.mass;

  // Force and torque are R times body-frame quantities, so d/de_j = dR_j R' w.
  for (int j = 0; j < 3; ++j) {
    const Mat3 dr = rot::euler_zyx_partial(e, j);
    const Mat3 g = dr * k.r.transpose();
    jx.block<3, 1>(mi::lin_momentum, mi::euler + j) = g * w.head<3>();
    jx.block<3, 1>(mi::ang_momentum, mi::euler + j) = g * w.tail<3>();
    const Mat3 dm = rot::euler_rate_to_world_omega_partial(e, j);
    const Vec3 d_omega = (dr * i_inv * k.r.transpose() + k.r * i_inv * dr.transpose()) * h;
    jx.block<3, 1>(mi::euler, mi::euler + j) = -em_inv * dm * em_inv * omega + em_inv * d_omega;
  }
  jx.block<3, 3>(mi::euler, mi::ang_momentum) = em_inv * k.r * i_inv * k.r.transpose();
  jx.block<3, 4>(mi::lin_momentum, mi::thrust) = k.alloc.topRows<3>();
  jx.block<3, 4>(mi::ang_momentum, mi::thrust) = k.alloc.bottomRows<3>();
  jx.block<3, 4>(mi::lin_momentum, mi::joints) = dq.topRows<3>();
  jx.block<3, 4>(mi::ang_momentum, mi::joints) = dq.bottomRows<3>();

  for (int i = 0; i < kNumJets; ++i) {
    const JetLinearization lin =
        jet_linearize({x(mi::thrust + i), x(mi::thrust_rate + i)}, u(i), coeffs);
    const int rows[2] = {mi::thrust + i, mi::thrust_rate + i};
    for (int r = 0; r < 2; ++r) {
      jx(rows[r], mi::thrust + i) = lin.state_matrix(r, 0);
      jx(rows[r], mi::thrust_rate + i) = lin.state_matrix(r, 1);
      ju(rows[r], i) = lin.input_matrix(r);
    }
  }
  ju.block<4, 4>(mi::joints, 4).setIdentity();
  return {jx, ju};
}

DiscreteModel linearize_prediction_model(const RobotModel& model, const JetCoefficients& coeffs,
                                         const MpcState& x, const ThrottleCommand& u0,
                                         double alpha, double dt, double pitch_guard) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0, 1]");
  if (!(dt > 0.0)) throw DomainError("dt must be positive");
  check_pitch(x.centroidal.euler_zyx, pitch_guard);
  const MpcVec x0 = x.to_vector();
  if (!x0.allFinite() || !u0.u.allFinite()) throw NumericError("non-finite linearization point");
  MpcInput uu = MpcInput::Zero();
  uu.head<4>() = u0.u;
  const auto [jx, ju] = prediction_jacobians(model, coeffs, x0, uu, alpha);
  const MpcVec f0 = prediction_rhs(model, coeffs, x0, uu, alpha);
  DiscreteModel d;
  d.a = MpcStateMatrix::Identity() + dt * jx;
  d.b = dt * ju;
  d.c = dt * (f0 - jx * x0 - ju * uu);
  return d;
}

MpcQp build_qp(const RobotModel& model, const JetCoefficients& coeffs, const MpcState& x,
               const ThrottleCommand& previous, const TakeoffSchedule& schedule,
               const ReferenceTrajectory& reference, double t, const MpcParams& params) {
  params.validate();
  reference.validate();
  const int n = params.horizon_steps;
  const double dt = params.dt_coarse;
  const int nu = kMpcInputs;
  const int nx = kMpcStates;
  const int nv = n * nu;
  const auto& w = params.weights;

  MpcQp out;
  out.model = linearize_prediction_model(model, coeffs, x, previous, schedule.alpha, dt, params.pitch_guard);
  const auto& dm = out.model;

  // Effort is measured from the alpha-scaled hover trim at the desired attitude.
  const Mat3 r_ref = rot::euler_zyx_to_matrix(reference.euler);
  out.trim = solve_hover_trim(model, r_ref, schedule.alpha, model.nominal_posture);
  out.trim_input.setZero();
  for (int i = 0; i < kNumJets; ++i) {
    out.trim_input(i) = std::clamp(coeffs.throttle_for_thrust(out.trim.thrusts(i)), params.throttle_min,
                                   params.throttle_max);
  }

  // Prediction X = G U + F over steps 1..N.
  const MpcVec x0 = x.to_vector();
  MatX g = MatX::Zero(n * nx, nv);
  MatX f = MatX::Zero(n * nx, 1);
  MpcVec fk = x0;
  for (int k = 0; k < n; ++k) {
    fk = dm.a * fk + dm.c;
    f.block(k * nx, 0, nx, 1) = fk;
    if (k > 0) g.block(k * nx, 0, nx, k * nu) = dm.a * g.block((k - 1) * nx, 0, nx, k * nu);
    g.block(k * nx, k * nu, nx, nu) = dm.b;
  }

  // Reference and state weights.
  VecX xr(n * nx), qd(n * nx);
  MpcVec qw = MpcVec::Zero();
  qw.segment<3>(mi::com) = w.com_position;
  qw.segment<3>(mi::lin_momentum) = w.lin_momentum;
  qw.segment<3>(mi::euler) = w.euler;
  qw.segment<3>(mi::ang_momentum) = w.ang_momentum;
  qw.segment<4>(mi::joints).setConstant(w.joint_posture);
  Vec3 e_ref;
  for (int i = 0; i < 3; ++i) {
    e_ref(i) = x.centroidal.euler_zyx(i) + rot::wrap_angle(reference.euler(i) - x.centroidal.euler_zyx(i));
  }
  for (int k = 0; k < n; ++k) {
    const double tk = t + (k + 1) * dt;
    MpcVec r = MpcVec::Zero();
    r.segment<3>(mi::com) = reference.com_at(tk);
    r.segment<3>(mi::lin_momentum) =
        model.mass * (reference.com_at(tk + 0.5 * dt) - reference.com_at(tk - 0.5 * dt)) / dt;
    r.segment<3>(mi::euler) = e_ref;
    r.segment<4>(mi::thrust) = out.trim.thrusts;
    r.segment<4>(mi::joints) = out.trim.q.angles;
    xr.segment(k * nx, nx) = r;
    qd.segment(k * nx, nx) = (k == n - 1 ? w.terminal_scale : 1.0) * qw;
  }

  VecX rd(nv), ut(nv);
  for (int k = 0; k < n; ++k) {
    rd.segment(k * nu, 4) = w.throttle_effort;
    rd.segment(k * nu + 4, 4) = w.joint_rate;
    ut.segment(k * nu, nu) = out.trim_input;
  }

  // Throttle differences: u_0 - u_prev, u_k - u_{k-1}.
  MatX d = MatX::Zero(n * 4, nv);
  VecX d0 = VecX::Zero(n * 4);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < 4; ++i) {
      d(k * 4 + i, k * nu + i) = 1.0;
      if (k > 0) d(k * 4 + i, (k - 1) * nu + i) = -1.0;
    }
  }
  d0.head<4>() = previous.u;

  const MatX gq = g.transpose() * qd.asDiagonal();
  MatX h = gq * g;
  h.diagonal() += rd;
  h += w.throttle_change * d.transpose() * d;
  VecX lin = gq * (f - xr) - rd.cwiseProduct(ut) - w.throttle_change * d.transpose() * d0;

  const double scale = std::max(1e-12, h.diagonal().maxCoeff());
  out.cost_scale = scale;
  h = (0.5 / scale * (h + h.transpose())).eval();
  lin /= scale;

  QpProblem& qp = out.qp;
  qp.h = h;
  qp.f = lin;
  qp.a_eq = MatX(0, nv);
  qp.b_eq = VecX(0);
  qp.lb.resize(nv);
  qp.ub.resize(nv);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < 4; ++i) {
      double lo = params.throttle_min, hi = params.throttle_max;
      if (k == 0) {
        lo = std::max(lo, previous.u(i) - params.throttle_rate_max);
        hi = std::min(hi, previous.u(i) + params.throttle_rate_max);
        if (lo > hi) lo = hi = std::clamp(previous.u(i), params.throttle_min, params.throttle_max);
      }
      qp.lb(k * nu + i) = lo;
      qp.ub(k * nu + i) = hi;
      qp.lb(k * nu + 4 + i) = -params.joint_rate_max;
      qp.ub(k * nu + 4 + i) = params.joint_rate_max;
    }
  }

  // Inequalities: throttle rate (k >= 1), predicted joint limits, 0 <= thrust <= max.
  const int rows = 2 * 4 * (n - 1) + 2 * 4 * n + 2 * 4 * n;
  qp.a_in = MatX::Zero(rows, nv);
  qp.b_in = VecX::Zero(rows);
  int r = 0;
  for (int k = 1; k < n; ++k) {
    for (int i = 0; i < 4; ++i) {
      qp.a_in(r, k * nu + i) = 1.0;
      qp.a_in(r, (k - 1) * nu + i) = -1.0;
      qp.b_in(r++) = params.throttle_rate_max;
      qp.a_in(r, k * nu + i) = -1.0;
      qp.a_in(r, (k - 1) * nu + i) = 1.0;
      qp.b_in(r++) = params.throttle_rate_max;
    }
  }
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < 4; ++i) {
      const int jq = k * nx + mi::joints + i;
      qp.a_in.row(r) = g.row(jq);
      qp.b_in(r++) = params.joint_limits.upper(i) - f(jq, 0);
      qp.a_in.row(r) = -g.row(jq);
      qp.b_in(r++) = f(jq, 0) - params.joint_limits.lower(i);
      const int jt = k * nx + mi::thrust + i;
      qp.a_in.row(r) = g.row(jt);
      qp.b_in(r++) = kMaxThrust - f(jt, 0);
      qp.a_in.row(r) = -g.row(jt);
      qp.b_in(r++) = f(jt, 0);
    }
  }
  return out;
}

Vec4 interpolate_joint_reference(const Vec4& prev, const Vec4& next, double t, double dt) {
  const double s = std::clamp(t / dt, 0.0, 1.0);
  return prev + s * (next - prev);
}

const char* to_string(MpcStatus s) {
  switch (s) {
    case MpcStatus::Ok: return "Ok";
    case MpcStatus::Gated: return "Gated";
    case MpcStatus::HeldAfterFailure: return "HeldAfterFailure";
    case MpcStatus::StaleEstimate: return "StaleEstimate";
    case MpcStatus::Singularity: return "Singularity";
    case MpcStatus::Failed: return "Failed";
  }
  return "?";
}

FlightController::FlightController(RobotModel model, JetCoefficients coeffs, MpcParams params)
    : model_(std::move(model)), coeffs_(coeffs), params_(std::move(params)), solver_(params_.qp) {
  model_.validate();
  params_.validate();
  last_.joint_reference = model_.nominal_posture.angles;
}

MpcCommand FlightController::hold(MpcStatus status, const std::string& error) {
  MpcCommand c = last_;
  c.diagnostics = {};
  c.diagnostics.status = status;
  c.diagnostics.error = error;
  return c;
}

MpcCommand FlightController::step(double t, const MpcEstimate& estimate, const TakeoffSchedule& schedule,
                                  const ReferenceTrajectory& reference) {
  const Vec4& lo = params_.joint_limits.lower;
  const Vec4& hi = params_.joint_limits.upper;

  if (schedule.phase == FlightPhase::Shutdown) {
    // Linear ramp to zero throttle over one second from the level at entry.
    if (!shutdown_from_) shutdown_from_ = last_.throttle.u;
    MpcCommand c = last_;
    c.diagnostics = {};
    c.throttle.u = (last_.throttle.u - *shutdown_from_ * params_.dt_coarse).cwiseMax(0.0);
    warm_.reset();
    last_ = c;
    return c;
  }
  shutdown_from_.reset();

  if (schedule.phase == FlightPhase::Idle || schedule.phase == FlightPhase::Spool) {
    MpcCommand c;
    c.throttle.u.setZero();
    c.joint_reference = model_.nominal_posture.angles.cwiseMax(lo).cwiseMin(hi);
    consecutive_failures_ = 0;
    warm_.reset();
    last_ = c;
    return c;
  }

  const double age = t - estimate.stamp;
  if (!(age <= params_.max_estimate_age)) {
    std::ostringstream os;
    os << "estimate is " << age * 1e3 << " ms old";
    return hold(MpcStatus::StaleEstimate, os.str());
  }
  if (std::abs(estimate.x.centroidal.euler_zyx(1)) > kPi / 2.0 - params_.pitch_guard) {
    MpcCommand c = hold(MpcStatus::Singularity, "pitch inside the singularity guard band");
    c.diagnostics.request_shutdown = true;
    return c;
  }

  const auto wall0 = std::chrono::steady_clock::now();
  MpcQp q;
  QpSolution sol;
  try {
    q = build_qp(model_, coeffs_, estimate.x, last_.throttle, schedule, reference, t, params_);
    std::optional<VecX> warm;
    if (warm_ && warm_->size() == q.qp.num_vars()) {
      VecX shifted = *warm_;
      const Eigen::Index nu = kMpcInputs;
      shifted.head(shifted.size() - nu) = warm_->tail(shifted.size() - nu);
      warm = shifted;
    }
    sol = solver_.solve(q.qp, warm);
  } catch (const SingularityError& e) {
    MpcCommand c = hold(MpcStatus::Singularity, e.what());
    c.diagnostics.request_shutdown = true;
    return c;
  } catch (const std::exception& e) {
    sol.status = QpStatus::Infeasible;
    sol.x = VecX();
    ++consecutive_failures_;
    MpcCommand c = hold(consecutive_failures_ >= 2 ? MpcStatus::Failed : MpcStatus::HeldAfterFailure, e.what());
    c.diagnostics.request_shutdown = consecutive_failures_ >= 2;
    return c;
  }
  const double solve_time =
      wall_timing_ ? std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count() : 0.0;

  if (sol.status != QpStatus::Optimal) {
    ++consecutive_failures_;
    warm_.reset();
    const bool fail = consecutive_failures_ >= 2;
    MpcCommand c = hold(fail ? MpcStatus::Failed : MpcStatus::HeldAfterFailure,
                        std::string("QP status ") + to_string(sol.status));
    c.diagnostics.qp_status = sol.status;
    c.diagnostics.qp_iterations = sol.iterations;
    c.diagnostics.solve_time = solve_time;
    c.diagnostics.request_shutdown = fail;
    return c;
  }
  consecutive_failures_ = 0;
  warm_ = sol.x;

  MpcCommand c;
  ThrottleCommand desired;
  desired.u = sol.x.head<4>();
  c.throttle = limit_throttle(desired, last_.throttle, params_.throttle_rate_max);
  c.throttle.u = c.throttle.u.cwiseMax(params_.throttle_min).cwiseMin(params_.throttle_max);
  const Vec4 rates = sol.x.segment<4>(4);
  c.joint_reference = (estimate.x.q.angles + params_.dt_coarse * rates).cwiseMax(lo).cwiseMin(hi);
  c.diagnostics.status = MpcStatus::Ok;
  c.diagnostics.qp_status = sol.status;
  c.diagnostics.qp_iterations = sol.iterations;
  c.diagnostics.cost = sol.objective * q.cost_scale;
  c.diagnostics.solve_time = solve_time;
  last_ = c;
  return c;
}

}  // namespace jetvtol
