#pragma once

// Multi-rate scheduler on a simulated 1 kHz clock: sensors and truth every
// tick, pose estimator every 5th, thrust estimator every 10th, MPC every
// 100th. Owns the flight phase; commands from other threads go through a
// single channel and are applied at the start of a tick.

#include <atomic>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>

#include "jetvtol/gcs/config.hpp"
#include "jetvtol/gcs/flight_log.hpp"
#include "jetvtol/gcs/telemetry.hpp"

namespace jetvtol::gcs {

struct CommandResult {
  bool accepted = false;
  FlightPhase phase = FlightPhase::Idle;  // phase after handling
  std::string reason;                     // set when rejected
};

/// Phase rules only; `has_trajectory` tells whether a named trajectory exists.
CommandResult check_command(const OperatorCommand& cmd, FlightPhase phase,
                            const std::function<bool(const std::string&)>& has_trajectory = {});

struct ExitReport {
  FlightPhase final_phase = FlightPhase::Idle;
  double end_time = 0.0;
  std::uint64_t ticks = 0;
  /// Highest CoM rise above its initial height, m.
  double peak_altitude = 0.0;
  Vec3 tracking_mae = Vec3::Zero();           // m, truth CoM vs reference
  Vec3 orientation_mae_deg = Vec3::Zero();    // yaw, pitch, roll
  std::uint64_t metrics_samples = 0;
  std::string shutdown_reason;
  std::optional<double> reference_step_time;  // first accepted SetReference
  std::optional<double> liftoff_time;         // contact lost for good (>= 1 s)
  /// Longest time off the ground with every Euler error within 5 degrees.
  double stable_flight_duration = 0.0;
  double max_thrust = 0.0;
  double max_orientation_error_deg = 0.0;     // while airborne
  std::uint64_t mpc_updates = 0;
  std::uint64_t throttle_changes = 0;
  std::uint64_t throttle_changes_off_boundary = 0;
  std::uint64_t joint_reference_updates = 0;
  std::uint64_t pose_estimates = 0;
  std::uint64_t thrust_estimates = 0;
  std::uint64_t frames = 0;
  bool logging_ok = true;

  Json to_json() const;
};

class Runtime {
 public:
  using AckFn = std::function<void(const CommandResult&)>;

  explicit Runtime(ScenarioConfig cfg);

  /// Thread-safe. The command is applied at the start of the next tick.
  void submit(const OperatorCommand& cmd, AckFn ack = {});

  /// Applies a command now. Scheduler thread only.
  CommandResult handle_command(const OperatorCommand& cmd);

  /// Advances one 1 ms tick and returns the resulting frame.
  const TelemetryFrame& step();
  bool finished() const;

  FlightPhase phase() const { return schedule_.phase; }
  const TakeoffSchedule& schedule() const { return schedule_; }
  const WorldState& world() const { return world_; }
  const ReferenceTrajectory& reference() const { return reference_; }
  const TelemetryFrame& frame() const { return frame_; }
  const ScenarioConfig& config() const { return cfg_; }
  ExitReport report() const;

  /// Test hook: replaces the estimated Euler angles seen by the safety
  /// monitor and the MPC from the next tick on.
  void inject_euler_estimate(std::optional<Vec3> euler) { injected_euler_ = euler; }
  void set_logging_ok(bool ok) { logging_ok_ = ok; }
  void set_wall_timing(bool on) { controller_.set_wall_timing(on); }

 private:
  MpcEstimate current_estimate() const;
  void enter_shutdown(const std::string& reason);
  void run_controller(double t, const MpcEstimate& est);
  void apply_reference(const OperatorCommand& cmd, double t);
  void update_metrics();

  ScenarioConfig cfg_;
  SimParams sim_;
  WorldState world_;
  SensorSuite sensors_;
  BasePoseEstimator pose_;
  ThrustEstimator thrust_;
  FlightController controller_;
  TakeoffSchedule schedule_;
  ReferenceTrajectory reference_;
  Vec3 initial_com_;

  PoseEstimate pose_est_;
  double thrust_stamp_ = 0.0;
  Vec4 last_rpm_ = Vec4::Zero();
  ThrottleCommand applied_;
  MpcCommand last_cmd_;
  Vec4 joint_prev_ = Vec4::Zero();
  Vec4 joint_next_ = Vec4::Zero();
  std::uint64_t segment_tick_ = 0;
  std::string shutdown_reason_;
  std::optional<double> shutdown_time_;
  std::size_t script_pos_ = 0;
  std::optional<Vec3> injected_euler_;
  bool logging_ok_ = true;

  std::mutex channel_mutex_;
  std::deque<std::pair<OperatorCommand, AckFn>> channel_;

  TelemetryFrame frame_;
  ExitReport rep_;
  Vec3 abs_err_sum_ = Vec3::Zero();
  Vec3 abs_euler_err_sum_ = Vec3::Zero();
  double initial_com_z_ = 0.0;
  std::optional<double> contact_lost_at_;
  std::optional<double> stable_since_;
};

class TelemetryServer;

struct RunOptions {
  std::string log_path;
  LogHeader header;
  TelemetryServer* server = nullptr;
  /// Wall-clock pacing factor; 0 runs as fast as possible.
  double realtime_factor = 0.0;
  bool wall_timing = false;
  const std::atomic<bool>* stop = nullptr;
  /// Called for every frame after logging (tests, CLI progress).
  std::function<void(const TelemetryFrame&)> on_frame;
};

/// Runs to the configured duration or shutdown_linger after Shutdown.
ExitReport run_scenario(const ScenarioConfig& cfg, const RunOptions& opts = {});

/// Log header describing a config file plus overrides.
LogHeader make_header(const ScenarioConfig& cfg, const std::string& config_text,
                      const std::vector<Override>& overrides);

}  // namespace jetvtol::gcs
