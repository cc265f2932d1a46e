#pragma once

// Flight log: newline-delimited JSON. Line 1 is a header record, then one
// frame record per simulation tick, then an optional report record. The
// writer never throws on I/O failure; it disables itself and reports !ok().

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "jetvtol/gcs/telemetry.hpp"

namespace jetvtol::gcs {

struct LogHeader {
  std::string scenario;
  std::uint64_t seed = 0;
  /// Config source text and overrides, enough to re-run the scenario.
  std::string config_text;
  std::vector<std::string> overrides;
};

Json header_to_json(const LogHeader& h);
LogHeader header_from_json(const Json& j);

class FlightLogWriter {
 public:
  FlightLogWriter() = default;
  /// Empty path: no file, ok() stays true.
  FlightLogWriter(const std::string& path, const LogHeader& header);

  void write_frame(const std::string& encoded_frame);
  void write_report(const Json& report);
  void close();

  bool ok() const { return ok_; }
  bool enabled() const { return out_.is_open(); }
  std::uint64_t frames_written() const { return frames_; }

 private:
  void write_line(const std::string& line);

  std::ofstream out_;
  bool ok_ = true;
  std::uint64_t frames_ = 0;
};

struct FlightLog {
  LogHeader header;
  /// Frame records exactly as stored.
  std::vector<std::string> frame_lines;
  std::optional<Json> report;
};

/// Throws ProtocolError with the line number on malformed content.
FlightLog read_flight_log(const std::string& path);

/// Writes csv_header() and one csv_row() per frame.
void export_csv(const FlightLog& log, const std::string& csv_path);

}  // namespace jetvtol::gcs
