#include "jetvtol/gcs/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace jetvtol::gcs {

namespace {

std::string format_error(const std::string& path, int line, const std::string& msg) {
  std::ostringstream os;
  if (line > 0) os << "line " << line << ": ";
  os << (path.empty() ? "<root>" : path) << ": " << msg;
  return os.str();
}

int line_of(const YAML::Node& n) {
  const auto m = n.Mark();
  return m.is_null() ? 0 : m.line + 1;
}

std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

// A mapping node whose keys must all be consumed.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(path_, line_of(node_), "expected a mapping");
    }
  }

  YAML::Node take(const std::string& key) {
    used_.insert(key);
    if (!node_ || node_.IsNull()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& cn = node_;
    return cn[key];
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!used_.count(key)) throw ConfigError(join(path_, key), line_of(kv.first), "unknown key");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

double as_double(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) throw ConfigError(path, line_of(n), "expected a number");
  try {
    return n.as<double>();
  } catch (const YAML::Exception&) {
    throw ConfigError(path, line_of(n), "expected a number, got '" + n.Scalar() + "'");
  }
}

template <int N>
Eigen::Matrix<double, N, 1> as_vec(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence() || n.size() != N) {
    throw ConfigError(path, line_of(n), "expected a list of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = as_double(n[i], path + "[" + std::to_string(i) + "]");
  return v;
}

void read(Section& s, const std::string& key, double& out) {
  const auto n = s.take(key);
  if (n) out = as_double(n, s.path(key));
}

void read(Section& s, const std::string& key, int& out) {
  const auto n = s.take(key);
  if (!n) return;
  try {
    out = n.as<int>();
  } catch (const YAML::Exception&) {
    throw ConfigError(s.path(key), line_of(n), "expected an integer");
  }
}

void read(Section& s, const std::string& key, std::uint64_t& out) {
  const auto n = s.take(key);
  if (!n) return;
  try {
    out = n.as<std::uint64_t>();
  } catch (const YAML::Exception&) {
    throw ConfigError(s.path(key), line_of(n), "expected a non-negative integer");
  }
}

void read(Section& s, const std::string& key, std::string& out) {
  const auto n = s.take(key);
  if (!n) return;
  if (!n.IsScalar()) throw ConfigError(s.path(key), line_of(n), "expected a string");
  out = n.Scalar();
}

template <int N>
void read(Section& s, const std::string& key, Eigen::Matrix<double, N, 1>& out) {
  const auto n = s.take(key);
  if (n) out = as_vec<N>(n, s.path(key));
}

void parse_weights(const YAML::Node& node, const std::string& path, MpcWeights& w) {
  Section s(node, path);
  read(s, "com_position", w.com_position);
  read(s, "euler", w.euler);
  read(s, "lin_momentum", w.lin_momentum);
  read(s, "ang_momentum", w.ang_momentum);
  read(s, "throttle_effort", w.throttle_effort);
  read(s, "joint_rate", w.joint_rate);
  read(s, "joint_posture", w.joint_posture);
  read(s, "throttle_change", w.throttle_change);
  read(s, "terminal_scale", w.terminal_scale);
  s.finish();
}

void parse_mpc(const YAML::Node& node, const std::string& path, MpcParams& p) {
  Section s(node, path);
  read(s, "horizon_steps", p.horizon_steps);
  read(s, "dt_coarse", p.dt_coarse);
  read(s, "throttle_min", p.throttle_min);
  read(s, "throttle_max", p.throttle_max);
  read(s, "throttle_rate_max", p.throttle_rate_max);
  read(s, "joint_rate_max", p.joint_rate_max);
  read(s, "pitch_guard", p.pitch_guard);
  read(s, "shutdown_orientation_limit", p.shutdown_orientation_limit);
  read(s, "max_estimate_age", p.max_estimate_age);
  read(s, "qp_tol", p.qp.tol);
  read(s, "qp_max_iter", p.qp.max_iter);
  parse_weights(s.take("weights"), s.path("weights"), p.weights);
  s.finish();
}

void parse_sim(const YAML::Node& node, const std::string& path, SimParams& p) {
  Section s(node, path);
  read(s, "servo_time_constant", p.servo_time_constant);
  {
    Section c(s.take("contact"), s.path("contact"));
    read(c, "stiffness", p.contact.stiffness);
    read(c, "damping", p.contact.damping);
    read(c, "friction_coeff", p.contact.friction_coeff);
    read(c, "friction_damping", p.contact.friction_damping);
    c.finish();
  }
  {
    Section m(s.take("model"), s.path("model"));
    read(m, "mass", p.model.mass);
    read(m, "base_to_com", p.model.base_to_com);
    m.finish();
  }
  {
    Section j(s.take("jets"), s.path("jets"));
    read(j, "a1", p.jets.a1);
    read(j, "a2", p.jets.a2);
    read(j, "b1", p.jets.b1);
    read(j, "b2", p.jets.b2);
    read(j, "c", p.jets.c);
    j.finish();
  }
  s.finish();
}

void parse_noise(const YAML::Node& node, const std::string& path, NoiseConfig& n) {
  Section s(node, path);
  read(s, "ft_force_std", n.ft_force_std);
  read(s, "rpm_std", n.rpm_std);
  read(s, "imu_orientation_std", n.imu_orientation_std);
  read(s, "gyro_std", n.gyro_std);
  read(s, "vio_position_std", n.vio_position_std);
  read(s, "vio_orientation_std", n.vio_orientation_std);
  read(s, "vio_velocity_std", n.vio_velocity_std);
  read(s, "vio_ang_velocity_std", n.vio_ang_velocity_std);
  read(s, "vio_latency", n.vio_latency);
  if (const auto b = s.take("ft_bias")) {
    const std::string bp = s.path("ft_bias");
    if (!b.IsSequence() || b.size() != kNumJets) throw ConfigError(bp, line_of(b), "expected 4 entries");
    for (std::size_t i = 0; i < kNumJets; ++i) {
      n.ft_bias[i] = as_vec<3>(b[i], bp + "[" + std::to_string(i) + "]");
    }
  }
  s.finish();
}

void parse_estimators(const YAML::Node& node, const std::string& path, PoseEstimatorConfig& pose,
                      ThrustEstimatorConfig& thrust) {
  Section s(node, path);
  {
    Section p(s.take("pose"), s.path("pose"));
    read(p, "accel_std", pose.accel_std);
    read(p, "ang_accel_std", pose.ang_accel_std);
    read(p, "imu_orientation_std", pose.imu_orientation_std);
    read(p, "imu_gyro_std", pose.imu_gyro_std);
    read(p, "vio_position_std", pose.vio_position_std);
    read(p, "vio_orientation_std", pose.vio_orientation_std);
    read(p, "vio_velocity_std", pose.vio_velocity_std);
    read(p, "vio_ang_velocity_std", pose.vio_ang_velocity_std);
    read(p, "vio_latency", pose.vio_latency);
    p.finish();
  }
  {
    Section t(s.take("thrust"), s.path("thrust"));
    read(t, "ft_noise_std", thrust.ft_noise_std);
    read(t, "rpm_noise_std", thrust.rpm_noise_std);
    read(t, "accel_noise_std", thrust.accel_noise_std);
    read(t, "bias_walk_std", thrust.bias_walk_std);
    t.finish();
  }
  s.finish();
}

std::optional<CommandKind> command_kind(const std::string& s) {
  for (auto k : {CommandKind::Arm, CommandKind::StartTakeoff, CommandKind::SetReference, CommandKind::Abort}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

void parse_script(const YAML::Node& node, const std::string& path, std::vector<ScriptedCommand>& out) {
  if (!node) return;
  if (!node.IsSequence()) throw ConfigError(path, line_of(node), "expected a list of commands");
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string ip = path + "[" + std::to_string(i) + "]";
    Section s(node[i], ip);
    ScriptedCommand c;
    read(s, "t", c.t);
    std::string cmd;
    read(s, "cmd", cmd);
    const auto kind = command_kind(cmd);
    if (!kind) throw ConfigError(s.path("cmd"), line_of(node[i]), "unknown command '" + cmd + "'");
    c.command.kind = *kind;
    if (const auto z = s.take("z_offset")) c.command.z_offset = as_double(z, s.path("z_offset"));
    read(s, "trajectory", c.command.trajectory);
    s.finish();
    out.push_back(c);
  }
}

void parse_trajectories(const YAML::Node& node, const std::string& path,
                        std::map<std::string, TrajectorySpec>& out) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(path, line_of(node), "expected a mapping of trajectories");
  for (const auto& kv : node) {
    const std::string name = kv.first.as<std::string>();
    const std::string tp = join(path, name);
    if (!kv.second.IsSequence()) throw ConfigError(tp, line_of(kv.second), "expected a list of [t, dx, dy, dz]");
    TrajectorySpec spec;
    for (std::size_t i = 0; i < kv.second.size(); ++i) {
      const Vec4 row = as_vec<4>(kv.second[i], tp + "[" + std::to_string(i) + "]");
      spec.times.push_back(row(0));
      spec.offsets.push_back(row.tail<3>());
    }
    out[name] = spec;
  }
}

ScenarioConfig parse(const YAML::Node& root) {
  ScenarioConfig c;
  Section s(root, "");
  read(s, "name", c.name);
  read(s, "duration", c.duration);
  read(s, "seed", c.seed);
  read(s, "ramp_rate", c.ramp_rate);
  read(s, "telemetry_decimation", c.telemetry_decimation);
  read(s, "shutdown_linger", c.shutdown_linger);
  {
    Section m(s.take("metrics"), "metrics");
    read(m, "start", c.metrics_start);
    read(m, "end", c.metrics_end);
    m.finish();
  }
  parse_sim(s.take("sim"), "sim", c.sim);
  parse_noise(s.take("noise"), "noise", c.noise);
  c.mpc.joint_limits = c.sim.model.joint_limits;
  parse_mpc(s.take("mpc"), "mpc", c.mpc);
  parse_estimators(s.take("estimators"), "estimators", c.pose, c.thrust);
  parse_trajectories(s.take("trajectories"), "trajectories", c.trajectories);
  parse_script(s.take("script"), "script", c.script);
  s.finish();
  c.noise.seed = c.seed;
  return c;
}

void apply_override(YAML::Node& root, const Override& o) {
  std::vector<std::string> parts;
  std::stringstream ss(o.key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError(o.key, 0, "empty key component in override");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError(o.key, 0, "empty override key");
  YAML::Node value;
  try {
    value = YAML::Load(o.value);
  } catch (const YAML::Exception& e) {
    throw ConfigError(o.key, 0, std::string("cannot parse override value: ") + e.what());
  }
  // Walk with fresh handles; yaml-cpp node assignment rebinds references.
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    YAML::Node next = chain.back()[parts[i]];
    if (!next || next.IsNull()) {
      chain.back()[parts[i]] = YAML::Node(YAML::NodeType::Map);
      next = chain.back()[parts[i]];
    }
    if (!next.IsMap()) throw ConfigError(o.key, line_of(next), "override path crosses a non-mapping");
    chain.push_back(next);
  }
  chain.back()[parts.back()] = value;
}

}  // namespace

ConfigError::ConfigError(const std::string& path, int line, const std::string& msg)
    : std::runtime_error(format_error(path, line, msg)), path_(path), line_(line) {}

const char* to_string(CommandKind k) {
  switch (k) {
    case CommandKind::Arm: return "Arm";
    case CommandKind::StartTakeoff: return "StartTakeoff";
    case CommandKind::SetReference: return "SetReference";
    case CommandKind::Abort: return "Abort";
  }
  return "?";
}

void ScenarioConfig::validate() const {
  const auto bad = [](const std::string& p, const std::string& m) { throw ConfigError(p, 0, m); };
  if (!(duration > 0.0)) bad("duration", "must be positive");
  if (!(ramp_rate >= 0.0 && ramp_rate <= 10.0)) bad("ramp_rate", "must lie in [0, 10]");
  if (telemetry_decimation < 1) bad("telemetry_decimation", "must be >= 1");
  if (!(shutdown_linger >= 0.0)) bad("shutdown_linger", "must be >= 0");
  if (sim.dt != 0.001) bad("sim.dt", "the scheduler runs at 1 kHz");
  if (std::abs(mpc.dt_coarse - 0.1) > 1e-12) bad("mpc.dt_coarse", "must equal the 0.1 s turbine actuation period");
  try {
    sim.validate();
    noise.validate();
    mpc.validate();
  } catch (const DomainError& e) {
    bad("", e.what());
  }
  for (const auto& [name, t] : trajectories) {
    if (t.times.empty()) bad("trajectories." + name, "needs at least one waypoint");
    for (std::size_t i = 1; i < t.times.size(); ++i) {
      if (!(t.times[i] > t.times[i - 1])) bad("trajectories." + name, "waypoint times must increase");
    }
  }
  double prev = -1e300;
  for (std::size_t i = 0; i < script.size(); ++i) {
    const auto& c = script[i];
    const std::string p = "script[" + std::to_string(i) + "]";
    if (!(c.t >= 0.0) || c.t < prev) bad(p, "command times must be non-negative and sorted");
    prev = c.t;
    if (c.command.kind == CommandKind::SetReference) {
      if (c.command.z_offset.has_value() == !c.command.trajectory.empty()) {
        bad(p, "SetReference needs exactly one of z_offset or trajectory");
      }
      if (!c.command.trajectory.empty() && !trajectories.count(c.command.trajectory)) {
        bad(p, "unknown trajectory '" + c.command.trajectory + "'");
      }
    }
  }
}

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(text, 0, "override must look like key=value");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

ScenarioConfig load_config_string(const std::string& yaml, const std::vector<Override>& overrides,
                                  const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source, e.mark.is_null() ? 0 : e.mark.line + 1, e.msg);
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw ConfigError("", line_of(root), "top level must be a mapping");
  for (const auto& o : overrides) apply_override(root, o);
  ScenarioConfig c = parse(root);
  c.validate();
  return c;
}

ScenarioConfig load_config(const std::string& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_string(ss.str(), overrides, path);
}

}  // namespace jetvtol::gcs
