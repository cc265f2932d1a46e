#include "jetvtol/gcs/flight_log.hpp"

namespace jetvtol::gcs {

Json header_to_json(const LogHeader& h) {
  Json j;
  j["v"] = kTelemetryVersion;
  j["kind"] = "header";
  j["scenario"] = h.scenario;
  j["seed"] = h.seed;
  j["config"] = h.config_text;
  j["overrides"] = h.overrides;
  return j;
}

LogHeader header_from_json(const Json& j) {
  try {
    if (j.at("v").get<int>() != kTelemetryVersion) throw ProtocolError("unsupported log version");
    if (j.at("kind").get<std::string>() != "header") throw ProtocolError("first record is not a header");
    LogHeader h;
    h.scenario = j.at("scenario").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.config_text = j.at("config").get<std::string>();
    h.overrides = j.at("overrides").get<std::vector<std::string>>();
    return h;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed header: ") + e.what());
  }
}

FlightLogWriter::FlightLogWriter(const std::string& path, const LogHeader& header) {
  if (path.empty()) return;
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) {
    ok_ = false;
    return;
  }
  write_line(header_to_json(header).dump());
}

void FlightLogWriter::write_line(const std::string& line) {
  if (!ok_ || !out_.is_open()) return;
  out_ << line << '\n';
  if (!out_) {
    ok_ = false;
    out_.close();
  }
}

void FlightLogWriter::write_frame(const std::string& encoded_frame) {
  write_line(encoded_frame);
  if (ok_ && out_.is_open()) ++frames_;
}

void FlightLogWriter::write_report(const Json& report) {
  Json j;
  j["v"] = kTelemetryVersion;
  j["kind"] = "report";
  j["report"] = report;
  write_line(j.dump());
}

void FlightLogWriter::close() {
  if (!out_.is_open()) return;
  out_.flush();
  if (!out_) ok_ = false;
  out_.close();
}

FlightLog read_flight_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProtocolError("cannot open log '" + path + "'");
  FlightLog log;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception&) {
      throw ProtocolError(path + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    const std::string kind = j.value("kind", "");
    if (!have_header) {
      log.header = header_from_json(j);
      have_header = true;
    } else if (kind == "frame") {
      log.frame_lines.push_back(line);
    } else if (kind == "report") {
      log.report = j.at("report");
    } else {
      throw ProtocolError(path + ":" + std::to_string(lineno) + ": unknown record kind '" + kind + "'");
    }
  }
  if (!have_header) throw ProtocolError(path + ": empty log");
  return log;
}

void export_csv(const FlightLog& log, const std::string& csv_path) {
  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ProtocolError("cannot write '" + csv_path + "'");
  out << csv_header() << '\n';
  for (const auto& line : log.frame_lines) out << csv_row(decode_frame(line)) << '\n';
  if (!out) throw ProtocolError("write failed for '" + csv_path + "'");
}

}  // namespace jetvtol::gcs
