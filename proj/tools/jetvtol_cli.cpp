// jetvtol: scenario runner, log replay/export and live telemetry server.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "jetvtol/gcs/config.hpp"
#include "jetvtol/gcs/flight_log.hpp"
#include "jetvtol/gcs/runtime.hpp"
#include "jetvtol/gcs/telemetry_server.hpp"

using namespace jetvtol::gcs;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Override> parse_overrides(const std::vector<std::string>& sets) {
  std::vector<Override> out;
  for (const auto& s : sets) out.push_back(parse_override(s));
  return out;
}

void print_report(const ExitReport& r) { std::cout << r.to_json().dump(2) << std::endl; }

int cmd_run(const std::string& config, const std::vector<std::string>& sets, const std::string& log_path,
            bool quiet) {
  const auto overrides = parse_overrides(sets);
  const std::string text = read_file(config);
  const ScenarioConfig cfg = load_config_string(text, overrides, config);
  RunOptions opts;
  opts.log_path = log_path.empty() ? cfg.name + ".jsonl" : log_path;
  opts.header = make_header(cfg, text, overrides);
  opts.stop = &g_stop;
  const auto wall0 = std::chrono::steady_clock::now();
  const ExitReport r = run_scenario(cfg, opts);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  if (!quiet) print_report(r);
  std::cerr << "log: " << opts.log_path << "  wall time: " << wall << " s\n";
  return r.logging_ok ? 0 : 3;
}

int cmd_serve(const std::string& config, const std::vector<std::string>& sets, const std::string& bind,
              const std::string& log_path, double speed, int wait_clients) {
  const auto overrides = parse_overrides(sets);
  const std::string text = read_file(config);
  const ScenarioConfig cfg = load_config_string(text, overrides, config);
  TelemetryServer server(bind);
  server.set_hello({{"scenario", cfg.name}, {"seed", cfg.seed}});
  std::cerr << "serving telemetry on port " << server.port() << std::endl;
  while (static_cast<int>(server.client_count()) < wait_clients && !g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  RunOptions opts;
  opts.log_path = log_path;
  opts.header = make_header(cfg, text, overrides);
  opts.server = &server;
  opts.realtime_factor = speed;
  opts.wall_timing = true;
  opts.stop = &g_stop;
  const ExitReport r = run_scenario(cfg, opts);
  server.flush(2.0);
  server.stop();
  print_report(r);
  return 0;
}

int cmd_replay(const std::string& log_path, const std::string& bind, double speed, bool verify) {
  const FlightLog log = read_flight_log(log_path);
  if (verify) {
    std::vector<Override> overrides;
    for (const auto& s : log.header.overrides) overrides.push_back(parse_override(s));
    const ScenarioConfig cfg = load_config_string(log.header.config_text, overrides, "<log header>");
    std::size_t i = 0;
    std::size_t mismatches = 0;
    RunOptions opts;
    opts.on_frame = [&](const TelemetryFrame& f) {
      if (i >= log.frame_lines.size() || encode_frame(f) != log.frame_lines[i]) {
        if (mismatches++ == 0) std::cerr << "first mismatch at frame " << i << "\n";
      }
      ++i;
    };
    run_scenario(cfg, opts);
    if (i != log.frame_lines.size()) ++mismatches;
    std::cout << (mismatches == 0 ? "replay verified: " : "replay MISMATCH: ") << i << " frames re-simulated, "
              << log.frame_lines.size() << " logged\n";
    return mismatches == 0 ? 0 : 1;
  }
  if (bind.empty()) {
    for (const auto& line : log.frame_lines) std::cout << line << '\n';
    return 0;
  }
  TelemetryServer server(bind);
  server.set_hello({{"scenario", log.header.scenario}, {"replay", true}});
  std::cerr << "replaying on port " << server.port() << std::endl;
  while (server.client_count() == 0 && !g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  std::optional<double> t0;
  const auto wall0 = std::chrono::steady_clock::now();
  for (const auto& line : log.frame_lines) {
    if (g_stop) break;
    const TelemetryFrame f = decode_frame(line);
    if (f.tick % 100 != 0) continue;
    if (!t0) t0 = f.t;
    if (speed > 0.0) {
      std::this_thread::sleep_until(wall0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                std::chrono::duration<double>((f.t - *t0) / speed)));
    }
    server.publish(line);
  }
  server.flush(2.0);
  return 0;
}

int cmd_export(const std::string& log_path, const std::string& csv_path) {
  export_csv(read_flight_log(log_path), csv_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  CLI::App app{"Jet-powered humanoid flight stack: simulation, estimation, control and ground station"};
  app.require_subcommand(1);
  std::vector<std::string> sets;
  app.add_option("--set", sets, "Override a config key, e.g. --set mpc.horizon_steps=20")->take_all();

  std::string config, log_path, bind, csv_path;
  double speed = 1.0;
  bool quiet = false;
  bool verify = false;
  int wait_clients = 0;

  auto* run = app.add_subcommand("run", "Run a scenario headless and write a flight log");
  run->add_option("config", config, "Scenario YAML")->required()->check(CLI::ExistingFile);
  run->add_option("--log", log_path, "Flight log path (default <name>.jsonl)");
  run->add_option("--set", sets, "Override a config key (key=value)");
  run->add_flag("--quiet", quiet, "Do not print the exit report");

  auto* serve = app.add_subcommand("serve", "Run a scenario in real time and stream telemetry");
  serve->add_option("config", config, "Scenario YAML")->required()->check(CLI::ExistingFile);
  serve->add_option("--bind", bind, "host:port to listen on")->required();
  serve->add_option("--log", log_path, "Flight log path (default: none)");
  serve->add_option("--speed", speed, "Simulated seconds per wall second, 0 = unpaced")->check(CLI::NonNegativeNumber);
  serve->add_option("--wait-clients", wait_clients, "Wait for this many subscribers before starting");
  serve->add_option("--set", sets, "Override a config key (key=value)");

  auto* replay = app.add_subcommand("replay", "Replay a flight log");
  replay->add_option("log", log_path, "Flight log")->required()->check(CLI::ExistingFile);
  replay->add_option("--bind", bind, "Stream the decimated frames to subscribers instead of stdout");
  replay->add_option("--speed", speed, "Playback speed when streaming, 0 = unpaced")->check(CLI::NonNegativeNumber);
  replay->add_flag("--verify", verify, "Re-simulate from the log header and compare every frame");

  auto* exp = app.add_subcommand("export", "Export core channels of a flight log to CSV");
  exp->add_option("log", log_path, "Flight log")->required()->check(CLI::ExistingFile);
  exp->add_option("--csv", csv_path, "Output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, sets, log_path, quiet);
    if (*serve) return cmd_serve(config, sets, bind, log_path, speed, wait_clients);
    if (*replay) return cmd_replay(log_path, bind, speed, verify);
    if (*exp) return cmd_export(log_path, csv_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
