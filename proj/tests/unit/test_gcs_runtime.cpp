#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "jetvtol/gcs/runtime.hpp"

using namespace jetvtol;
using namespace jetvtol::gcs;

namespace {

OperatorCommand make(CommandKind k) {
  OperatorCommand c;
  c.kind = k;
  return c;
}

ScenarioConfig scripted(double duration, std::vector<ScriptedCommand> script) {
  ScenarioConfig c;
  c.duration = duration;
  c.script = std::move(script);
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("jetvtol_test_" + name)).string();
}

std::size_t count_csv_fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST_CASE("check_command: transition graph and gating") {
  const auto traj = [](const std::string& id) { return id == "box"; };

  CommandResult r = check_command(make(CommandKind::Arm), FlightPhase::Idle);
  CHECK(r.accepted);
  CHECK(r.phase == FlightPhase::Spool);

  r = check_command(make(CommandKind::StartTakeoff), FlightPhase::Idle);
  CHECK_FALSE(r.accepted);
  CHECK(r.phase == FlightPhase::Idle);
  CHECK(r.reason.find("not armed") != std::string::npos);

  r = check_command(make(CommandKind::StartTakeoff), FlightPhase::Spool);
  CHECK(r.accepted);
  CHECK(r.phase == FlightPhase::Ramp);

  for (FlightPhase p : {FlightPhase::Spool, FlightPhase::Ramp, FlightPhase::Airborne, FlightPhase::Shutdown}) {
    r = check_command(make(CommandKind::Arm), p);
    CHECK_FALSE(r.accepted);
    CHECK_FALSE(r.reason.empty());
  }
  for (FlightPhase p : {FlightPhase::Idle, FlightPhase::Spool, FlightPhase::Ramp, FlightPhase::Airborne,
                        FlightPhase::Shutdown}) {
    r = check_command(make(CommandKind::Abort), p);
    CHECK(r.accepted);
    CHECK(r.phase == FlightPhase::Shutdown);
  }

  OperatorCommand set = make(CommandKind::SetReference);
  CHECK_FALSE(check_command(set, FlightPhase::Airborne).accepted);
  set.z_offset = 1.0;
  CHECK(check_command(set, FlightPhase::Airborne).accepted);
  CHECK_FALSE(check_command(set, FlightPhase::Shutdown).accepted);
  set.z_offset = std::nan("");
  CHECK_FALSE(check_command(set, FlightPhase::Airborne).accepted);
  set.z_offset.reset();
  set.trajectory = "box";
  CHECK(check_command(set, FlightPhase::Airborne, traj).accepted);
  set.trajectory = "circle";
  CHECK_FALSE(check_command(set, FlightPhase::Airborne, traj).accepted);
}

TEST_CASE("runtime: handle_command drives the phase") {
  Runtime rt(ScenarioConfig{});
  CHECK(rt.phase() == FlightPhase::Idle);
  CHECK_FALSE(rt.handle_command(make(CommandKind::StartTakeoff)).accepted);
  CHECK(rt.handle_command(make(CommandKind::Arm)).phase == FlightPhase::Spool);
  CHECK(rt.handle_command(make(CommandKind::StartTakeoff)).phase == FlightPhase::Ramp);
  const CommandResult r = rt.handle_command(make(CommandKind::Abort));
  CHECK(r.accepted);
  CHECK(rt.phase() == FlightPhase::Shutdown);
  CHECK(rt.report().shutdown_reason == "operator abort");
}

TEST_CASE("runtime: live commands go through the channel with acks") {
  Runtime rt(ScenarioConfig{});
  std::vector<CommandResult> acks;
  rt.submit(make(CommandKind::StartTakeoff), [&](const CommandResult& r) { acks.push_back(r); });
  rt.submit(make(CommandKind::Arm), [&](const CommandResult& r) { acks.push_back(r); });
  CHECK(acks.empty());
  rt.step();
  REQUIRE(acks.size() == 2);
  CHECK_FALSE(acks[0].accepted);
  CHECK(acks[1].accepted);
  CHECK(acks[1].phase == FlightPhase::Spool);
  CHECK(rt.frame().phase == FlightPhase::Spool);
}

TEST_CASE("runtime: SetReference moves the CoM reference") {
  ScenarioConfig cfg;
  cfg.trajectories["leg"] = {{0.0, 2.0}, {Vec3::Zero(), Vec3(0.4, 0.0, 0.0)}};
  Runtime rt(cfg);
  const Vec3 c0 = rt.reference().com_at(0.0);
  OperatorCommand up = make(CommandKind::SetReference);
  up.z_offset = 1.0;
  up.t_received = 1.0;
  REQUIRE(rt.handle_command(up).accepted);
  CHECK(rt.reference().com_at(0.5).isApprox(c0));
  CHECK(rt.reference().com_at(1.5).z() == doctest::Approx(c0.z() + 1.0));

  OperatorCommand leg = make(CommandKind::SetReference);
  leg.trajectory = "leg";
  leg.t_received = 3.0;
  REQUIRE(rt.handle_command(leg).accepted);
  CHECK(rt.reference().com_at(4.0).x() == doctest::Approx(c0.x() + 0.2));
  CHECK(rt.reference().com_at(9.0).x() == doctest::Approx(c0.x() + 0.4));
  CHECK(rt.reference().com_at(9.0).z() == doctest::Approx(c0.z() + 1.0));
  CHECK(rt.report().reference_step_time == 1.0);
}

TEST_CASE("runtime: multi-rate schedule over 10 s") {
  ScenarioConfig cfg = scripted(10.0, {{0.0, {CommandKind::Arm}}, {1.0, {CommandKind::StartTakeoff}}});
  cfg.ramp_rate = 0.1;
  const ExitReport r = run_scenario(cfg);
  CHECK(r.ticks == 10000);
  CHECK(r.frames == 10000);
  CHECK(r.mpc_updates == 100);
  CHECK(r.joint_reference_updates == 10000);
  CHECK(r.pose_estimates == 2000);
  CHECK(r.thrust_estimates == 1000);
  CHECK(r.throttle_changes > 50);
  CHECK(r.throttle_changes_off_boundary == 0);
  CHECK(r.final_phase == FlightPhase::Ramp);
}

TEST_CASE("runtime: frames are strictly increasing in time and flag MPC ticks") {
  ScenarioConfig cfg = scripted(1.0, {{0.0, {CommandKind::Arm}}});
  Runtime rt(cfg);
  double last = -1.0;
  int mpc = 0;
  while (!rt.finished()) {
    const TelemetryFrame& f = rt.step();
    CHECK(f.t > last);
    last = f.t;
    mpc += f.mpc_updated ? 1 : 0;
    CHECK(f.pose_updated == ((f.tick - 1) % 5 == 0));
  }
  CHECK(mpc == 10);
}

TEST_CASE("runtime: stalled ramp never lifts off") {
  ScenarioConfig cfg = scripted(12.0, {{0.0, {CommandKind::Arm}},
                                       {1.0, {CommandKind::StartTakeoff}},
                                       {2.0, {CommandKind::SetReference, 0.0, 1.0, ""}}});
  cfg.ramp_rate = 0.0;
  const ExitReport r = run_scenario(cfg);
  CHECK(r.final_phase == FlightPhase::Ramp);
  CHECK(r.peak_altitude < 0.05);
  CHECK_FALSE(r.liftoff_time.has_value());
}

TEST_CASE("runtime: Abort ramps the throttle to zero within 1 s") {
  ScenarioConfig cfg = scripted(8.0, {{0.0, {CommandKind::Arm}}, {0.5, {CommandKind::StartTakeoff}}});
  cfg.ramp_rate = 0.2;
  Runtime rt(cfg);
  while (rt.world().time < 4.05) rt.step();
  REQUIRE(rt.frame().jets[0].throttle > 10.0);
  OperatorCommand abort = make(CommandKind::Abort);
  rt.submit(abort);
  const double t_abort = rt.world().time;
  double prev = 1e9;
  std::optional<double> zero_at;
  while (!rt.finished()) {
    const TelemetryFrame& f = rt.step();
    double u = 0.0;
    for (const auto& j : f.jets) u = std::max(u, j.throttle);
    CHECK(u <= prev + 1e-12);
    prev = u;
    if (!zero_at && u == 0.0) zero_at = f.t;
  }
  REQUIRE(zero_at.has_value());
  CHECK(*zero_at - t_abort <= 1.0 + 1e-9);
  const ExitReport r = rt.report();
  CHECK(r.final_phase == FlightPhase::Shutdown);
  CHECK(r.shutdown_reason == "operator abort");
  CHECK(r.end_time == doctest::Approx(t_abort + cfg.shutdown_linger).epsilon(1e-3));
}

TEST_CASE("runtime: injected roll beyond the limit triggers Shutdown on the same tick") {
  ScenarioConfig cfg = scripted(10.0, {{0.0, {CommandKind::Arm}}, {0.1, {CommandKind::StartTakeoff}}});
  Runtime rt(cfg);
  while (rt.world().time < 1.0) rt.step();
  REQUIRE(rt.phase() == FlightPhase::Ramp);
  rt.inject_euler_estimate(Vec3(0.0, 0.0, 25.0 * std::numbers::pi / 180.0));
  for (int i = 0; i < 200; ++i) rt.step();
  CHECK(rt.phase() == FlightPhase::Ramp);
  rt.inject_euler_estimate(Vec3(0.0, 0.0, 35.0 * std::numbers::pi / 180.0));
  const TelemetryFrame& f = rt.step();
  CHECK(f.phase == FlightPhase::Shutdown);
  CHECK(f.shutdown_reason == "orientation error above limit");
  CHECK(f.mpc_updated);
}

TEST_CASE("flight log: record count, header, report and replay round trip") {
  const std::string path = temp_path("log.jsonl");
  ScenarioConfig cfg = scripted(10.0, {{0.0, {CommandKind::Arm}}, {1.0, {CommandKind::StartTakeoff}}});
  cfg.name = "logtest";
  RunOptions opts;
  opts.log_path = path;
  opts.header = make_header(cfg, "duration: 10\n", {parse_override("seed=1")});
  const ExitReport r = run_scenario(cfg, opts);
  CHECK(r.logging_ok);

  const FlightLog log = read_flight_log(path);
  CHECK(log.frame_lines.size() == 10000);
  CHECK(log.header.scenario == "logtest");
  CHECK(log.header.config_text == "duration: 10\n");
  CHECK(log.header.overrides == std::vector<std::string>{"seed=1"});
  REQUIRE(log.report.has_value());
  CHECK(log.report->at("frames").get<std::uint64_t>() == 10000);

  double last = -1.0;
  for (const auto& line : log.frame_lines) {
    const TelemetryFrame f = decode_frame(line);
    CHECK(encode_frame(f) == line);
    CHECK(Json::parse(line).at("v") == kTelemetryVersion);
    CHECK(f.t > last);
    last = f.t;
  }

  const std::string csv = temp_path("log.csv");
  export_csv(log, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == csv_header());
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line); ++rows) CHECK(count_csv_fields(line) == count_csv_fields(header));
  CHECK(rows == 10000);
  std::filesystem::remove(path);
  std::filesystem::remove(csv);
}

TEST_CASE("flight log: documented CSV header") {
  CHECK(csv_header() ==
        "t,tick,phase,alpha,contact,com_x,com_y,com_z,yaw,pitch,roll,est_com_x,est_com_y,est_com_z,est_yaw,"
        "est_pitch,est_roll,ref_x,ref_y,ref_z,err_x,err_y,err_z,T0,T1,T2,T3,T_est0,T_est1,T_est2,T_est3,u0,u1,u2,"
        "u3,rpm0,rpm1,rpm2,rpm3,q0,q1,q2,q3,q_ref0,q_ref1,q_ref2,q_ref3,mpc_status,mpc_iterations,mpc_cost,"
        "logging_ok");
}

TEST_CASE("flight log: malformed logs are rejected") {
  const std::string path = temp_path("bad.jsonl");
  {
    std::ofstream(path) << "not json\n";
  }
  CHECK_THROWS_AS(read_flight_log(path), ProtocolError);
  {
    std::ofstream(path) << R"({"v":1,"kind":"frame"})" << "\n";
  }
  CHECK_THROWS_AS(read_flight_log(path), ProtocolError);
  CHECK_THROWS_AS(read_flight_log(temp_path("missing.jsonl")), ProtocolError);
  CHECK_THROWS_AS(decode_frame(R"({"v":2,"kind":"frame"})"), ProtocolError);
  CHECK_THROWS_AS(decode_frame(R"({"v":1,"kind":"frame","t":1})"), ProtocolError);
  std::filesystem::remove(path);
}

TEST_CASE("flight log: a full disk disables logging but the run continues") {
  if (!std::filesystem::exists("/dev/full")) return;
  ScenarioConfig cfg = scripted(2.0, {});
  RunOptions opts;
  opts.log_path = "/dev/full";
  bool saw_flag = false;
  opts.on_frame = [&](const TelemetryFrame& f) { saw_flag = saw_flag || !f.logging_ok; };
  const ExitReport r = run_scenario(cfg, opts);
  CHECK(r.ticks == 2000);
  CHECK_FALSE(r.logging_ok);
  CHECK(saw_flag);
}

TEST_CASE("runtime: same seed gives identical frames, another seed does not") {
  const auto run = [](std::uint64_t seed) {
    ScenarioConfig cfg = scripted(3.0, {{0.0, {CommandKind::Arm}}, {0.5, {CommandKind::StartTakeoff}}});
    cfg.seed = seed;
    cfg.ramp_rate = 0.2;
    std::vector<std::string> lines;
    RunOptions opts;
    opts.on_frame = [&](const TelemetryFrame& f) { lines.push_back(encode_frame(f)); };
    run_scenario(cfg, opts);
    return lines;
  };
  const auto a = run(7);
  const auto b = run(7);
  const auto c = run(8);
  CHECK(a == b);
  CHECK(a != c);
}
