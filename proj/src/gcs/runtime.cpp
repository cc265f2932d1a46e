#include "jetvtol/gcs/runtime.hpp"

#include <chrono>
#include <numbers>
#include <cmath>
#include <thread>

#include "jetvtol/gcs/telemetry_server.hpp"

namespace jetvtol::gcs {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTick = 0.001;
constexpr std::uint64_t kMpcPeriodTicks = 100;
constexpr double kStableLimit = 5.0 * kPi / 180.0;
constexpr double kLiftoffHold = 1.0;  // s without contact before lift-off counts

double wrap(double a) { return std::remainder(a, 2.0 * kPi); }

}  // namespace

CommandResult check_command(const OperatorCommand& cmd, FlightPhase phase,
                            const std::function<bool(const std::string&)>& has_trajectory) {
  CommandResult r;
  r.phase = phase;
  const auto reject = [&](std::string why) {
    r.accepted = false;
    r.reason = std::move(why);
    return r;
  };
  switch (cmd.kind) {
    case CommandKind::Arm:
      if (phase != FlightPhase::Idle) return reject(std::string("Arm is only accepted in Idle, phase is ") + to_string(phase));
      r.phase = FlightPhase::Spool;
      break;
    case CommandKind::StartTakeoff:
      if (phase == FlightPhase::Idle) return reject("StartTakeoff rejected: not armed");
      if (phase != FlightPhase::Spool) {
        return reject(std::string("StartTakeoff is only accepted in Spool, phase is ") + to_string(phase));
      }
      r.phase = FlightPhase::Ramp;
      break;
    case CommandKind::SetReference:
      if (phase == FlightPhase::Shutdown) return reject("SetReference rejected during Shutdown");
      if (cmd.z_offset.has_value() == !cmd.trajectory.empty()) {
        return reject("SetReference needs exactly one of z_offset or trajectory");
      }
      if (cmd.z_offset && !(std::isfinite(*cmd.z_offset) && std::abs(*cmd.z_offset) <= 10.0)) {
        return reject("z_offset must be finite and within 10 m");
      }
      if (!cmd.trajectory.empty() && !(has_trajectory && has_trajectory(cmd.trajectory))) {
        return reject("unknown trajectory '" + cmd.trajectory + "'");
      }
      break;
    case CommandKind::Abort:
      r.phase = FlightPhase::Shutdown;
      break;
  }
  r.accepted = true;
  return r;
}

Json ExitReport::to_json() const {
  const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["final_phase"] = to_string(final_phase);
  j["end_time"] = end_time;
  j["ticks"] = ticks;
  j["peak_altitude"] = peak_altitude;
  j["tracking_mae"] = {tracking_mae.x(), tracking_mae.y(), tracking_mae.z()};
  j["orientation_mae_deg"] = {orientation_mae_deg.x(), orientation_mae_deg.y(), orientation_mae_deg.z()};
  j["metrics_samples"] = metrics_samples;
  j["shutdown_reason"] = shutdown_reason.empty() ? Json(nullptr) : Json(shutdown_reason);
  j["reference_step_time"] = opt(reference_step_time);
  j["liftoff_time"] = opt(liftoff_time);
  j["stable_flight_duration"] = stable_flight_duration;
  j["max_thrust"] = max_thrust;
  j["max_orientation_error_deg"] = max_orientation_error_deg;
  j["mpc_updates"] = mpc_updates;
  j["throttle_changes"] = throttle_changes;
  j["throttle_changes_off_boundary"] = throttle_changes_off_boundary;
  j["joint_reference_updates"] = joint_reference_updates;
  j["pose_estimates"] = pose_estimates;
  j["thrust_estimates"] = thrust_estimates;
  j["frames"] = frames;
  j["logging_ok"] = logging_ok;
  return j;
}

Runtime::Runtime(ScenarioConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      sim_(cfg_.sim),
      world_(standing_world(sim_, sim_.model.nominal_posture)),
      sensors_([&] {
        NoiseConfig n = cfg_.noise;
        n.seed = cfg_.seed;
        return n;
      }(), sim_),
      pose_(cfg_.pose, world_.base, 0.0),
      thrust_(sim_.model, sim_.jets, sim_.rpm_map, cfg_.thrust, Vec4::Zero()),
      controller_(sim_.model, sim_.jets, cfg_.mpc) {
  schedule_.ramp_rate = cfg_.ramp_rate;
  initial_com_ = truth_com(world_, sim_.model);
  initial_com_z_ = initial_com_.z();
  reference_ = ReferenceTrajectory::hold(initial_com_, world_.base.euler_zyx());
  joint_prev_ = joint_next_ = world_.q.angles;
  pose_est_ = pose_.snapshot();
  frame_.q_ref = world_.q.angles;
}

void Runtime::submit(const OperatorCommand& cmd, AckFn ack) {
  std::lock_guard lock(channel_mutex_);
  channel_.emplace_back(cmd, std::move(ack));
}

CommandResult Runtime::handle_command(const OperatorCommand& cmd) {
  CommandResult r = check_command(cmd, schedule_.phase,
                                  [this](const std::string& id) { return cfg_.trajectories.count(id) > 0; });
  if (!r.accepted) return r;
  switch (cmd.kind) {
    case CommandKind::Arm:
    case CommandKind::StartTakeoff:
      schedule_.phase = r.phase;
      break;
    case CommandKind::SetReference:
      apply_reference(cmd, cmd.t_received);
      if (!rep_.reference_step_time) rep_.reference_step_time = cmd.t_received;
      break;
    case CommandKind::Abort:
      enter_shutdown("operator abort");
      break;
  }
  r.phase = schedule_.phase;
  return r;
}

void Runtime::apply_reference(const OperatorCommand& cmd, double t) {
  if (cmd.z_offset) {
    Vec3 target = reference_.com_at(t);
    target.z() = initial_com_.z() + *cmd.z_offset;
    reference_.append(t, target);
    return;
  }
  const TrajectorySpec& spec = cfg_.trajectories.at(cmd.trajectory);
  const Vec3 base = reference_.com_at(t);
  while (!reference_.times.empty() && reference_.times.back() >= t) {
    reference_.times.pop_back();
    reference_.com.pop_back();
  }
  reference_.times.push_back(t);
  reference_.com.push_back(base);
  for (std::size_t i = 0; i < spec.times.size(); ++i) {
    const double ti = t + spec.times[i];
    if (ti <= reference_.times.back()) {
      reference_.com.back() = base + spec.offsets[i];
    } else {
      reference_.times.push_back(ti);
      reference_.com.push_back(base + spec.offsets[i]);
    }
  }
}

void Runtime::enter_shutdown(const std::string& reason) {
  if (schedule_.phase == FlightPhase::Shutdown) return;
  schedule_.phase = FlightPhase::Shutdown;
  shutdown_reason_ = reason;
  shutdown_time_ = world_.time;
}

MpcEstimate Runtime::current_estimate() const {
  const RobotModel& m = sim_.model;
  const BaseState& b = pose_est_.state;
  const Mat3 r = b.orientation.toRotationMatrix();
  MpcEstimate e;
  e.x.q = world_.q;
  e.x.centroidal.com_position = estimated_com(b, world_.q, m);
  e.x.centroidal.lin_momentum = m.mass * (b.lin_velocity + r * b.ang_velocity.cross(m.base_to_com));
  e.x.centroidal.euler_zyx = injected_euler_ ? *injected_euler_ : b.euler_zyx();
  e.x.centroidal.ang_momentum = r * m.inertia_body * b.ang_velocity;
  const ThrustEstimate& te = thrust_.estimate();
  for (int i = 0; i < kNumJets; ++i) e.x.jets[i] = {te.thrust(i), te.thrust_rate(i)};
  e.stamp = std::min(pose_est_.t, thrust_stamp_);
  return e;
}

void Runtime::run_controller(double t, const MpcEstimate& est) {
  MpcCommand cmd = controller_.step(t, est, schedule_, reference_);
  ++rep_.mpc_updates;
  if (cmd.diagnostics.request_shutdown && schedule_.phase != FlightPhase::Shutdown) {
    std::string reason = std::string("controller: ") + to_string(cmd.diagnostics.status);
    if (!cmd.diagnostics.error.empty()) reason += " (" + cmd.diagnostics.error + ")";
    enter_shutdown(reason);
    const MpcDiagnostics diag = cmd.diagnostics;
    cmd = controller_.step(t, est, schedule_, reference_);
    cmd.diagnostics = diag;
  }
  last_cmd_ = cmd;
  joint_prev_ = frame_.q_ref;
  joint_next_ = cmd.joint_reference;
  segment_tick_ = world_.tick;
  if (cmd.throttle.u != applied_.u) {
    ++rep_.throttle_changes;
    if (world_.tick % kMpcPeriodTicks != 0) ++rep_.throttle_changes_off_boundary;
  }
  applied_ = cmd.throttle;
}

const TelemetryFrame& Runtime::step() {
  const std::uint64_t k = world_.tick;
  const double t = world_.time;
  const FlightPhase phase_at_start = schedule_.phase;

  // Sensors and estimators.
  const SensorBatch batch = sensors_.sample(world_);
  if (batch.vio) pose_.push_vio(*batch.vio);
  bool pose_updated = false;
  if (batch.imu) {
    pose_est_ = pose_.tick(t, batch.imu);
    pose_updated = true;
    ++rep_.pose_estimates;
  }
  if (batch.ft && batch.rpm) {
    thrust_.step(applied_, *batch.ft, *batch.rpm, 10 * kTick);
    thrust_stamp_ = t;
    for (int i = 0; i < kNumJets; ++i) last_rpm_(i) = (*batch.rpm)[i].rpm;
    ++rep_.thrust_estimates;
  }

  // Commands: scripted first, then the live channel.
  while (script_pos_ < cfg_.script.size() && cfg_.script[script_pos_].t <= t + 0.5 * kTick) {
    OperatorCommand c = cfg_.script[script_pos_++].command;
    c.t_received = t;
    handle_command(c);
  }
  std::deque<std::pair<OperatorCommand, AckFn>> pending;
  {
    std::lock_guard lock(channel_mutex_);
    pending.swap(channel_);
  }
  for (auto& [cmd, ack] : pending) {
    cmd.t_received = t;
    const CommandResult r = handle_command(cmd);
    if (ack) ack(r);
  }

  // Phase machine and safety monitor.
  const MpcEstimate est = current_estimate();
  if (schedule_.phase != FlightPhase::Shutdown) {
    const TakeoffSchedule next = advance_schedule(schedule_, est.x, reference_.euler, ground_contact_flag(world_),
                                                  kTick, cfg_.mpc.shutdown_orientation_limit);
    if (next.phase == FlightPhase::Shutdown) {
      enter_shutdown("orientation error above limit");
    } else {
      schedule_ = next;
    }
  }

  const bool entered_shutdown =
      phase_at_start != FlightPhase::Shutdown && schedule_.phase == FlightPhase::Shutdown;
  const bool mpc_updated = k % kMpcPeriodTicks == 0 || entered_shutdown;
  if (mpc_updated) run_controller(t, est);

  // Joint references at 1 kHz, linear between MPC targets.
  const double since = static_cast<double>(k - segment_tick_ + 1) * kTick;
  const Vec4 q_ref = interpolate_joint_reference(joint_prev_, joint_next_, since, cfg_.mpc.dt_coarse);
  ++rep_.joint_reference_updates;

  world_ = world_step(world_, applied_, q_ref, sim_);
  if (world_.faulted) enter_shutdown("simulation fault");

  // Frame.
  TelemetryFrame& f = frame_;
  f.t = world_.time;
  f.tick = world_.tick;
  f.phase = schedule_.phase;
  f.alpha = schedule_.alpha;
  f.contact = ground_contact_flag(world_);
  f.com_truth = truth_com(world_, sim_.model);
  f.euler_truth = world_.base.euler_zyx();
  f.com_est = est.x.centroidal.com_position;
  f.euler_est = est.x.centroidal.euler_zyx;
  f.pose_cov_diag = pose_est_.covariance_diag;
  f.pose_updated = pose_updated;
  const ThrustEstimate& te = thrust_.estimate();
  for (int i = 0; i < kNumJets; ++i) {
    f.jets[i] = {world_.jets[i].thrust, te.thrust(i), applied_.u(i), last_rpm_(i),
                 te.cov_trace(i),       te.nis_ft(i),  te.nis_rpm(i)};
  }
  f.q = world_.q.angles;
  f.q_ref = q_ref;
  f.com_ref = reference_.com_at(f.t);
  f.euler_ref = reference_.euler;
  f.tracking_error = f.com_truth - f.com_ref;
  f.mpc_updated = mpc_updated;
  const MpcDiagnostics& d = last_cmd_.diagnostics;
  f.mpc_status = d.status;
  f.qp_status = d.qp_status;
  f.qp_iterations = d.qp_iterations;
  f.mpc_cost = d.cost;
  f.solve_time = d.solve_time;
  f.mpc_error = d.error;
  f.logging_ok = logging_ok_;
  f.shutdown_reason = shutdown_reason_;

  update_metrics();
  return frame_;
}

void Runtime::update_metrics() {
  const TelemetryFrame& f = frame_;
  ++rep_.frames;
  rep_.peak_altitude = std::max(rep_.peak_altitude, f.com_truth.z() - initial_com_z_);
  for (const auto& j : f.jets) rep_.max_thrust = std::max(rep_.max_thrust, j.thrust);

  Vec3 euler_err;
  for (int i = 0; i < 3; ++i) euler_err(i) = std::abs(wrap(f.euler_truth(i) - f.euler_ref(i)));
  const double worst = euler_err.maxCoeff();

  const double end = cfg_.metrics_end < 0.0 ? cfg_.duration : cfg_.metrics_end;
  if (f.t >= cfg_.metrics_start - 1e-9 && f.t <= end + 1e-9) {
    abs_err_sum_ += f.tracking_error.cwiseAbs();
    abs_euler_err_sum_ += euler_err * (180.0 / kPi);
    ++rep_.metrics_samples;
  }

  const bool flying = !f.contact && f.phase != FlightPhase::Shutdown &&
                      (f.phase == FlightPhase::Ramp || f.phase == FlightPhase::Airborne);
  if (flying) {
    if (!contact_lost_at_) contact_lost_at_ = f.t;
    if (!rep_.liftoff_time && f.t - *contact_lost_at_ >= kLiftoffHold - 1e-9) rep_.liftoff_time = *contact_lost_at_;
    rep_.max_orientation_error_deg = std::max(rep_.max_orientation_error_deg, worst * 180.0 / kPi);
  } else {
    contact_lost_at_.reset();
  }
  if (flying && worst <= kStableLimit) {
    if (!stable_since_) stable_since_ = f.t;
    rep_.stable_flight_duration = std::max(rep_.stable_flight_duration, f.t - *stable_since_);
  } else {
    stable_since_.reset();
  }
}

bool Runtime::finished() const {
  if (world_.faulted) return true;
  if (world_.time >= cfg_.duration - 0.5 * kTick) return true;
  return shutdown_time_ && world_.time >= *shutdown_time_ + cfg_.shutdown_linger - 0.5 * kTick;
}

ExitReport Runtime::report() const {
  ExitReport r = rep_;
  r.final_phase = schedule_.phase;
  r.end_time = world_.time;
  r.ticks = world_.tick;
  r.shutdown_reason = shutdown_reason_;
  r.logging_ok = logging_ok_;
  if (r.metrics_samples > 0) {
    r.tracking_mae = abs_err_sum_ / static_cast<double>(r.metrics_samples);
    r.orientation_mae_deg = abs_euler_err_sum_ / static_cast<double>(r.metrics_samples);
  }
  return r;
}

LogHeader make_header(const ScenarioConfig& cfg, const std::string& config_text,
                      const std::vector<Override>& overrides) {
  LogHeader h;
  h.scenario = cfg.name;
  h.seed = cfg.seed;
  h.config_text = config_text;
  for (const auto& o : overrides) h.overrides.push_back(o.key + "=" + o.value);
  return h;
}

ExitReport run_scenario(const ScenarioConfig& cfg, const RunOptions& opts) {
  Runtime rt(cfg);
  rt.set_wall_timing(opts.wall_timing);
  FlightLogWriter log(opts.log_path, opts.header);
  if (opts.server) {
    opts.server->set_command_handler(
        [&rt](const OperatorCommand& c, Runtime::AckFn ack) { rt.submit(c, std::move(ack)); });
  }
  const int decimation = cfg.telemetry_decimation;
  const auto wall0 = std::chrono::steady_clock::now();
  while (!rt.finished() && !(opts.stop && opts.stop->load())) {
    rt.set_logging_ok(log.ok());
    const TelemetryFrame& f = rt.step();
    const std::string line = encode_frame(f);
    log.write_frame(line);
    if (opts.server && f.tick % static_cast<std::uint64_t>(decimation) == 0) opts.server->publish(line);
    if (opts.on_frame) opts.on_frame(f);
    if (opts.realtime_factor > 0.0) {
      std::this_thread::sleep_until(wall0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                std::chrono::duration<double>(f.t / opts.realtime_factor)));
    }
  }
  rt.set_logging_ok(log.ok());
  ExitReport report = rt.report();
  log.write_report(report.to_json());
  log.close();
  report.logging_ok = report.logging_ok && log.ok();
  if (opts.server) {
    opts.server->set_command_handler({});
    Json end;
    end["v"] = kTelemetryVersion;
    end["kind"] = "end";
    end["report"] = report.to_json();
    opts.server->publish(end.dump());
  }
  return report;
}

}  // namespace jetvtol::gcs
