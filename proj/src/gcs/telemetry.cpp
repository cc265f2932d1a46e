#include "jetvtol/gcs/telemetry.hpp"

#include <charconv>

namespace jetvtol::gcs {

namespace {

template <typename V>
Json vec_json(const V& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <typename V>
void vec_from(const Json& j, V& v, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != v.size()) {
    throw ProtocolError(std::string("field '") + what + "' has the wrong shape");
  }
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
}

const Json& field(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + key + "'");
  return *it;
}

void append_number(std::string& out, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

}  // namespace

Json frame_to_json(const TelemetryFrame& f) {
  Json j;
  j["v"] = kTelemetryVersion;
  j["kind"] = "frame";
  j["t"] = f.t;
  j["tick"] = f.tick;
  j["phase"] = to_string(f.phase);
  j["alpha"] = f.alpha;
  j["contact"] = f.contact;
  j["truth"] = {{"com", vec_json(f.com_truth)}, {"euler", vec_json(f.euler_truth)}};
  j["est"] = {{"com", vec_json(f.com_est)},
              {"euler", vec_json(f.euler_est)},
              {"cov", vec_json(f.pose_cov_diag)},
              {"updated", f.pose_updated}};
  Json jets = Json::array();
  for (const auto& jt : f.jets) {
    jets.push_back({{"T", jt.thrust},
                    {"T_est", jt.thrust_est},
                    {"u", jt.throttle},
                    {"rpm", jt.rpm},
                    {"cov_trace", jt.cov_trace},
                    {"nis_ft", jt.nis_ft},
                    {"nis_rpm", jt.nis_rpm}});
  }
  j["jets"] = std::move(jets);
  j["q"] = vec_json(f.q);
  j["q_ref"] = vec_json(f.q_ref);
  j["ref"] = {{"com", vec_json(f.com_ref)}, {"euler", vec_json(f.euler_ref)}};
  j["err"] = vec_json(f.tracking_error);
  j["mpc"] = {{"updated", f.mpc_updated},
              {"status", to_string(f.mpc_status)},
              {"qp_status", to_string(f.qp_status)},
              {"iterations", f.qp_iterations},
              {"cost", f.mpc_cost},
              {"solve_time", f.solve_time},
              {"error", f.mpc_error}};
  j["logging_ok"] = f.logging_ok;
  j["shutdown_reason"] = f.shutdown_reason.empty() ? Json(nullptr) : Json(f.shutdown_reason);
  return j;
}

TelemetryFrame frame_from_json(const Json& j) {
  try {
    if (field(j, "v").get<int>() != kTelemetryVersion) throw ProtocolError("unsupported schema version");
    if (field(j, "kind").get<std::string>() != "frame") throw ProtocolError("record is not a frame");
    TelemetryFrame f;
    f.t = field(j, "t").get<double>();
    f.tick = field(j, "tick").get<std::uint64_t>();
    const auto phase = flight_phase_from_string(field(j, "phase").get<std::string>());
    if (!phase) throw ProtocolError("unknown phase");
    f.phase = *phase;
    f.alpha = field(j, "alpha").get<double>();
    f.contact = field(j, "contact").get<bool>();
    const Json& truth = field(j, "truth");
    vec_from(field(truth, "com"), f.com_truth, "truth.com");
    vec_from(field(truth, "euler"), f.euler_truth, "truth.euler");
    const Json& est = field(j, "est");
    vec_from(field(est, "com"), f.com_est, "est.com");
    vec_from(field(est, "euler"), f.euler_est, "est.euler");
    vec_from(field(est, "cov"), f.pose_cov_diag, "est.cov");
    f.pose_updated = field(est, "updated").get<bool>();
    const Json& jets = field(j, "jets");
    if (!jets.is_array() || jets.size() != kNumJets) throw ProtocolError("field 'jets' has the wrong shape");
    for (std::size_t i = 0; i < kNumJets; ++i) {
      const Json& e = jets[i];
      f.jets[i] = {field(e, "T").get<double>(),      field(e, "T_est").get<double>(),
                   field(e, "u").get<double>(),      field(e, "rpm").get<double>(),
                   field(e, "cov_trace").get<double>(), field(e, "nis_ft").get<double>(),
                   field(e, "nis_rpm").get<double>()};
    }
    vec_from(field(j, "q"), f.q, "q");
    vec_from(field(j, "q_ref"), f.q_ref, "q_ref");
    const Json& ref = field(j, "ref");
    vec_from(field(ref, "com"), f.com_ref, "ref.com");
    vec_from(field(ref, "euler"), f.euler_ref, "ref.euler");
    vec_from(field(j, "err"), f.tracking_error, "err");
    const Json& mpc = field(j, "mpc");
    f.mpc_updated = field(mpc, "updated").get<bool>();
    f.mpc_status = mpc_status_from_string(field(mpc, "status").get<std::string>());
    f.qp_status = qp_status_from_string(field(mpc, "qp_status").get<std::string>());
    f.qp_iterations = field(mpc, "iterations").get<int>();
    f.mpc_cost = field(mpc, "cost").get<double>();
    f.solve_time = field(mpc, "solve_time").get<double>();
    f.mpc_error = field(mpc, "error").get<std::string>();
    f.logging_ok = field(j, "logging_ok").get<bool>();
    const Json& reason = field(j, "shutdown_reason");
    f.shutdown_reason = reason.is_null() ? std::string() : reason.get<std::string>();
    return f;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed frame: ") + e.what());
  }
}

std::string encode_frame(const TelemetryFrame& f) { return frame_to_json(f).dump(); }

TelemetryFrame decode_frame(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("invalid JSON: ") + e.what());
  }
  return frame_from_json(j);
}

const std::string& csv_header() {
  static const std::string h = [] {
    std::string s = "t,tick,phase,alpha,contact,com_x,com_y,com_z,yaw,pitch,roll,"
                    "est_com_x,est_com_y,est_com_z,est_yaw,est_pitch,est_roll,"
                    "ref_x,ref_y,ref_z,err_x,err_y,err_z";
    for (const char* p : {"T", "T_est", "u", "rpm", "q", "q_ref"}) {
      for (int i = 0; i < kNumJets; ++i) s += "," + std::string(p) + std::to_string(i);
    }
    s += ",mpc_status,mpc_iterations,mpc_cost,logging_ok";
    return s;
  }();
  return h;
}

std::string csv_row(const TelemetryFrame& f) {
  std::string s;
  const auto num = [&](double v) {
    s += ',';
    append_number(s, v);
  };
  append_number(s, f.t);
  s += ',' + std::to_string(f.tick) + ',' + to_string(f.phase);
  num(f.alpha);
  s += f.contact ? ",1" : ",0";
  for (const Vec3* v : {&f.com_truth, &f.euler_truth, &f.com_est, &f.euler_est, &f.com_ref, &f.tracking_error}) {
    for (int i = 0; i < 3; ++i) num((*v)(i));
  }
  for (const auto& j : f.jets) num(j.thrust);
  for (const auto& j : f.jets) num(j.thrust_est);
  for (const auto& j : f.jets) num(j.throttle);
  for (const auto& j : f.jets) num(j.rpm);
  for (int i = 0; i < 4; ++i) num(f.q(i));
  for (int i = 0; i < 4; ++i) num(f.q_ref(i));
  s += ',' + std::string(to_string(f.mpc_status)) + ',' + std::to_string(f.qp_iterations);
  num(f.mpc_cost);
  s += f.logging_ok ? ",1" : ",0";
  return s;
}

QpStatus qp_status_from_string(const std::string& s) {
  for (auto k : {QpStatus::Optimal, QpStatus::MaxIter, QpStatus::Infeasible}) {
    if (s == to_string(k)) return k;
  }
  throw ProtocolError("unknown QP status '" + s + "'");
}

MpcStatus mpc_status_from_string(const std::string& s) {
  for (auto k : {MpcStatus::Ok, MpcStatus::Gated, MpcStatus::HeldAfterFailure, MpcStatus::StaleEstimate,
                 MpcStatus::Singularity, MpcStatus::Failed}) {
    if (s == to_string(k)) return k;
  }
  throw ProtocolError("unknown MPC status '" + s + "'");
}

}  // namespace jetvtol::gcs
