// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "experiments.hpp"
#include "jetvtol/gcs/runtime.hpp"

using namespace jetvtol;
using namespace jetvtol::gcs;

namespace {

// Pinned tolerances.
constexpr double kLiftoffWithin = 5.0;        // s after the +1 m step
constexpr double kStableFor = 10.0;           // s with |euler error| <= 5 deg
constexpr double kMaxThrust = 250.0;          // N per turbine
constexpr double kTakeoffWall = 60.0;         // s wall clock
constexpr double kRampStart = 5.0;            // s, alpha leaves 0
constexpr double kRampEnd = 30.0;             // s, alpha reaches 1
constexpr double kRampTimeTol = 0.2;          // s
constexpr double kSquareMae = 0.05;           // m per axis
constexpr double kSquareEulerMae = 2.0;       // deg per axis
constexpr double kAlphaTol = 1e-10;
constexpr double kKfTol = 1e-6;
constexpr double kBandFraction = 0.9;         // steps inside the 95% band
constexpr double kJacobianTol = 1e-4;
constexpr double kKktTol = 1e-6;
constexpr double kEnumTol = 1e-5;
constexpr double kInjectedRollDeg = 35.0;
constexpr std::uint64_t kMpcTickTicks = 100;  // 1 ms ticks per MPC tick
constexpr double kAbortToZero = 1.0;          // s

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-22s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string config_path(const char* name) {
  return (std::filesystem::path(JETVTOL_SOURCE_DIR) / "configs" / name).string();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("jetvtol_acceptance_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool band_ok(const experiments::BandResult& b) { return b.inside >= kBandFraction * b.steps; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs(const Vec3& v) { return v.cwiseAbs().maxCoeff(); }

// ---------------------------------------------------------------- scenarios

/// Runs the take-off scenario with a log; returns the log path for the
/// determinism check.
std::string takeoff() {
  const ScenarioConfig cfg = load_config(config_path("takeoff.yaml"));
  RunOptions opts;
  opts.log_path = temp_path("takeoff_a.jsonl");
  opts.header = make_header(cfg, slurp(config_path("takeoff.yaml")), {});
  double alpha_leaves_zero = -1.0, alpha_reaches_one = -1.0;
  opts.on_frame = [&](const TelemetryFrame& f) {
    if (alpha_leaves_zero < 0.0 && f.alpha > 0.0) alpha_leaves_zero = f.t;
    if (alpha_reaches_one < 0.0 && f.alpha >= 1.0) alpha_reaches_one = f.t;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const ExitReport r = run_scenario(cfg, opts);
  const double wall = seconds_since(t0);

  const bool ramp_ok = std::abs(alpha_leaves_zero - kRampStart) <= kRampTimeTol &&
                       std::abs(alpha_reaches_one - kRampEnd) <= kRampTimeTol;
  const double step = r.reference_step_time.value_or(-1.0);
  const double lift = r.liftoff_time ? *r.liftoff_time - step : 1e9;
  const bool lift_ok = r.reference_step_time && r.liftoff_time && lift >= 0.0 && lift <= kLiftoffWithin;
  const bool stable_ok = r.stable_flight_duration >= kStableFor;
  const bool thrust_ok = r.max_thrust <= kMaxThrust;
  const bool wall_ok = wall < kTakeoffWall;
  const bool phase_ok = r.final_phase == FlightPhase::Airborne && r.peak_altitude >= 0.5;
  report(ramp_ok && lift_ok && stable_ok && thrust_ok && wall_ok && phase_ok && r.logging_ok, "takeoff",
         fmt("alpha 0->1 at %.3f..%.3f s; liftoff %.3f s after step; stable %.1f s (max err %.2f deg); "
             "max thrust %.1f N; peak %.2f m; phase %s; wall %.1f s",
             alpha_leaves_zero, alpha_reaches_one, lift, r.stable_flight_duration, r.max_orientation_error_deg,
             r.max_thrust, r.peak_altitude, std::string(to_string(r.final_phase)).c_str(), wall));
  return opts.log_path;
}

void square() {
  const ScenarioConfig cfg = load_config(config_path("square.yaml"));
  const ExitReport r = run_scenario(cfg);
  const bool ok = r.metrics_samples > 0 && max_abs(r.tracking_mae) <= kSquareMae &&
                  max_abs(r.orientation_mae_deg) <= kSquareEulerMae;
  report(ok, "square",
         fmt("CoM MAE (%.4f, %.4f, %.4f) m; euler MAE (%.3f, %.3f, %.3f) deg over %.0f s", r.tracking_mae.x(),
             r.tracking_mae.y(), r.tracking_mae.z(), r.orientation_mae_deg.x(), r.orientation_mae_deg.y(),
             r.orientation_mae_deg.z(), r.metrics_samples * cfg.sim.dt));
}

void multirate() {
  ScenarioConfig cfg;
  cfg.duration = 10.0;
  cfg.ramp_rate = 0.1;
  cfg.script = {{0.0, {CommandKind::Arm}}, {1.0, {CommandKind::StartTakeoff}}};
  const ExitReport r = run_scenario(cfg);
  const bool ok = r.mpc_updates == 100 && r.throttle_changes_off_boundary == 0 && r.throttle_changes > 0 &&
                  r.joint_reference_updates == 10000 && r.pose_estimates == 2000;
  report(ok, "multi-rate",
         fmt("MPC updates %llu (off-boundary throttle changes %llu); joint refs %llu; pose estimates %llu; "
             "thrust estimates %llu",
             static_cast<unsigned long long>(r.mpc_updates),
             static_cast<unsigned long long>(r.throttle_changes_off_boundary),
             static_cast<unsigned long long>(r.joint_reference_updates),
             static_cast<unsigned long long>(r.pose_estimates), static_cast<unsigned long long>(r.thrust_estimates)));
}

void safety() {
  // Injected roll estimate during the ramp.
  ScenarioConfig cfg;
  cfg.duration = 10.0;
  cfg.script = {{0.0, {CommandKind::Arm}}, {0.1, {CommandKind::StartTakeoff}}};
  std::uint64_t shutdown_after = 1u << 30;
  {
    Runtime rt(cfg);
    while (rt.world().time < 1.0) rt.step();
    const std::uint64_t injected_at = rt.frame().tick;
    rt.inject_euler_estimate(Vec3(0.0, 0.0, kInjectedRollDeg * std::numbers::pi / 180.0));
    while (!rt.finished() && rt.phase() != FlightPhase::Shutdown) rt.step();
    if (rt.phase() == FlightPhase::Shutdown) shutdown_after = rt.frame().tick - injected_at;
  }
  const bool roll_ok = shutdown_after <= kMpcTickTicks;

  // Operator abort from a spooled-up ramp.
  ScenarioConfig ab = cfg;
  ab.ramp_rate = 0.2;
  ab.script = {{0.0, {CommandKind::Arm}}, {0.5, {CommandKind::StartTakeoff}}};
  Runtime rt(ab);
  while (rt.world().time < 4.05) rt.step();
  double u_before = 0.0;
  for (const auto& j : rt.frame().jets) u_before = std::max(u_before, j.throttle);
  rt.submit(OperatorCommand{CommandKind::Abort});
  const double t_abort = rt.world().time;
  double zero_after = 1e9;
  while (!rt.finished()) {
    const TelemetryFrame& f = rt.step();
    double u = 0.0;
    for (const auto& j : f.jets) u = std::max(u, j.throttle);
    if (u == 0.0) {
      zero_after = f.t - t_abort;
      break;
    }
  }
  const bool abort_ok = u_before > 0.0 && zero_after <= kAbortToZero + 1e-9;
  report(roll_ok && abort_ok, "safety",
         fmt("%.0f deg roll -> Shutdown after %llu ms; Abort from %.1f%% throttle -> zero after %.3f s",
             kInjectedRollDeg, static_cast<unsigned long long>(shutdown_after), u_before, zero_after));
}

void determinism(const std::string& first_log) {
  const ScenarioConfig cfg = load_config(config_path("takeoff.yaml"));
  RunOptions opts;
  opts.log_path = temp_path("takeoff_b.jsonl");
  opts.header = make_header(cfg, slurp(config_path("takeoff.yaml")), {});
  run_scenario(cfg, opts);
  const std::string a = slurp(first_log);
  const std::string b = slurp(opts.log_path);
  report(!a.empty() && a == b, "determinism",
         fmt("two takeoff logs: %zu and %zu bytes, %s", a.size(), b.size(), a == b ? "identical" : "different"));
  std::filesystem::remove(first_log);
  std::filesystem::remove(opts.log_path);
}

// ---------------------------------------------------------------- components

void alpha_gravity() {
  const auto [worst, worst_a] = experiments::alpha_gravity_error();
  report(worst <= kAlphaTol && worst_a == 0.0, "alpha-gravity",
         fmt("max |drift change - (1-alpha) g| %.2e; other drift/A change %.2e", worst, worst_a));
}

void ukf_equivalence() {
  const auto r = experiments::ukf_vs_kf();
  report(r.worst_mean <= kKfTol && r.worst_cov <= kKfTol, "ukf-linear",
         fmt("20 systems x 100 steps: mean %.2e, cov %.2e", r.worst_mean, r.worst_cov));
}

void consistency() {
  const auto pose = experiments::pose_filter_consistency();
  const auto thrust = experiments::thrust_filter_consistency();
  const double exceed = static_cast<double>(pose.exceed) / pose.samples;
  const bool ok = band_ok(pose.nees) && band_ok(pose.nis_imu) && band_ok(thrust.nis_ft) &&
                  band_ok(thrust.nis_rpm) && band_ok(thrust.nees);
  report(ok, "estimator-consistency",
         fmt("50 runs, steps in 95%% band: pose NEES %d/%d, IMU NIS %d/%d (3-sigma exceed %.2f%%); "
             "thrust NEES %d/%d, FT NIS %d/%d, RPM NIS %d/%d",
             pose.nees.inside, pose.nees.steps, pose.nis_imu.inside, pose.nis_imu.steps, 100.0 * exceed,
             thrust.nees.inside, thrust.nees.steps, thrust.nis_ft.inside, thrust.nis_ft.steps, thrust.nis_rpm.inside,
             thrust.nis_rpm.steps));
}

void jacobians() {
  const double alloc = experiments::allocation_jacobian_error();
  const double jet = experiments::jet_jacobian_error();
  const auto pred = experiments::prediction_jacobian_error();
  report(alloc <= kJacobianTol && jet <= kJacobianTol && pred.worst_rel <= kJacobianTol, "jacobians",
         fmt("100 points each, worst relative: allocation %.2e, jet %.2e, prediction %.2e", alloc, jet,
             pred.worst_rel));
}

void qp() {
  const auto kkt = experiments::qp_random_kkt();
  const auto en = experiments::qp_vs_enumeration();
  const bool ok = kkt.optimal == kkt.problems && kkt.worst <= kKktTol && en.agreed_status == en.problems &&
                  en.worst_rel_objective <= kEnumTol;
  report(ok, "qp",
         fmt("%d/%d optimal, worst KKT %.2e; enumeration %d/%d, worst objective gap %.2e", kkt.optimal,
             kkt.problems, kkt.worst, en.agreed_status, en.problems, en.worst_rel_objective));
}

}  // namespace

int main() {
  const std::string log = takeoff();
  square();
  alpha_gravity();
  ukf_equivalence();
  consistency();
  jacobians();
  qp();
  multirate();
  safety();
  determinism(log);
  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
