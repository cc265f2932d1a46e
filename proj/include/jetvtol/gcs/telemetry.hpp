#pragma once

// Telemetry frame and its wire/log encoding. One JSON object per line; every
// record carries the schema version under "v" and its record type under "kind".

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "jetvtol/base_pose_estimator.hpp"
#include "jetvtol/flight_mpc.hpp"

namespace jetvtol::gcs {

using Json = nlohmann::ordered_json;

inline constexpr int kTelemetryVersion = 1;

struct JetTelemetry {
  double thrust = 0.0;      // truth, N
  double thrust_est = 0.0;  // N
  double throttle = 0.0;    // applied, percent
  double rpm = 0.0;         // last measurement
  double cov_trace = 0.0;
  double nis_ft = 0.0;
  double nis_rpm = 0.0;
};

struct TelemetryFrame {
  double t = 0.0;
  std::uint64_t tick = 0;
  FlightPhase phase = FlightPhase::Idle;
  double alpha = 0.0;
  bool contact = false;

  Vec3 com_truth = Vec3::Zero();
  Vec3 euler_truth = Vec3::Zero();  // yaw, pitch, roll
  Vec3 com_est = Vec3::Zero();
  Vec3 euler_est = Vec3::Zero();
  Vec12 pose_cov_diag = Vec12::Zero();
  bool pose_updated = false;

  std::array<JetTelemetry, kNumJets> jets{};
  Vec4 q = Vec4::Zero();
  Vec4 q_ref = Vec4::Zero();

  Vec3 com_ref = Vec3::Zero();
  Vec3 euler_ref = Vec3::Zero();
  Vec3 tracking_error = Vec3::Zero();  // truth - reference

  bool mpc_updated = false;
  MpcStatus mpc_status = MpcStatus::Gated;
  QpStatus qp_status = QpStatus::Optimal;
  int qp_iterations = 0;
  double mpc_cost = 0.0;
  double solve_time = 0.0;
  std::string mpc_error;

  bool logging_ok = true;
  std::string shutdown_reason;  // empty when none

  bool operator==(const TelemetryFrame&) const = default;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json frame_to_json(const TelemetryFrame& f);
TelemetryFrame frame_from_json(const Json& j);
/// Single line, no trailing newline.
std::string encode_frame(const TelemetryFrame& f);
TelemetryFrame decode_frame(std::string_view line);

/// CSV export of the core channels.
const std::string& csv_header();
std::string csv_row(const TelemetryFrame& f);

QpStatus qp_status_from_string(const std::string& s);
MpcStatus mpc_status_from_string(const std::string& s);

}  // namespace jetvtol::gcs
