#pragma once

// Scenario configuration (YAML). Every key is optional and falls back to
// the defaults of the structs below; unknown keys are errors.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "jetvtol/base_pose_estimator.hpp"
#include "jetvtol/flight_mpc.hpp"
#include "jetvtol/sim_world.hpp"
#include "jetvtol/thrust_estimator.hpp"

namespace jetvtol::gcs {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, int line, const std::string& msg);
  const std::string& path() const { return path_; }
  int line() const { return line_; }

 private:
  std::string path_;
  int line_;
};

enum class CommandKind { Arm, StartTakeoff, SetReference, Abort };
const char* to_string(CommandKind k);

struct OperatorCommand {
  CommandKind kind = CommandKind::Arm;
  double t_received = 0.0;
  /// SetReference: either a height offset over the initial CoM or a named trajectory.
  std::optional<double> z_offset;
  std::string trajectory;
};

struct ScriptedCommand {
  double t = 0.0;
  OperatorCommand command;
};

/// Waypoints relative to the reference point when the trajectory starts.
struct TrajectorySpec {
  std::vector<double> times;
  std::vector<Vec3> offsets;
};

struct ScenarioConfig {
  std::string name = "scenario";
  double duration = 10.0;  // s
  std::uint64_t seed = 1;
  SimParams sim{};
  NoiseConfig noise{};
  MpcParams mpc = MpcParams::for_model(reference_robot_model());
  double ramp_rate = 0.04;
  PoseEstimatorConfig pose{};
  ThrustEstimatorConfig thrust{};
  std::map<std::string, TrajectorySpec> trajectories;
  std::vector<ScriptedCommand> script;
  /// Telemetry decimation in 1 kHz ticks (100 -> 10 Hz).
  int telemetry_decimation = 100;
  /// Tracking metrics window [start, end] in s; end < 0 means run end.
  double metrics_start = 0.0;
  double metrics_end = -1.0;
  /// Stop the run this long after the first Shutdown tick.
  double shutdown_linger = 2.0;

  void validate() const;
};

/// `key.path=value`, value parsed as YAML.
struct Override {
  std::string key;
  std::string value;
};
Override parse_override(const std::string& text);

ScenarioConfig load_config_string(const std::string& yaml, const std::vector<Override>& overrides = {},
                                  const std::string& source = "<string>");
ScenarioConfig load_config(const std::string& path, const std::vector<Override>& overrides = {});

}  // namespace jetvtol::gcs
