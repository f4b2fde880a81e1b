#pragma once

// Result persistence: a versioned JSON envelope around per-command payloads,
// plus lossless scientific-notation CSV for the plot-ready tables. Reports
// carry no clocks: identical config and seed give byte-identical files.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "subqm/experiments.hpp"

namespace subqm {

inline constexpr char kToolName[] = "subqm";
inline constexpr char kToolVersion[] = "0.1.0";
inline constexpr int kReportSchema = 1;

using Json = nlohmann::ordered_json;

struct ReportEnvelope {
  std::string command;
  std::string units;  // "natural" or "si"
  std::uint64_t seed = 0;
  Json config;   // echo of the parsed run configuration
  Json results;  // command payload

  friend bool operator==(const ReportEnvelope&, const ReportEnvelope&) = default;
};

Json to_json(const ReportEnvelope& e);
ReportEnvelope envelope_from_json(const Json& j);

std::string render_json(const ReportEnvelope& e);
ReportEnvelope parse_envelope(const std::string& text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

// Scientific notation with 17 significant digits: round-trips any finite
// 64-bit float and never consults the locale.
std::string format_sci(double v);
std::string render_csv(const CsvTable& t);
CsvTable parse_csv(const std::string& text);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Payload builders shared by the command layer.
Json beam_json(const BeamConfig& cfg);
Json detector_json(const DetectorSpec& d);
Json regime_json(const RegimeLedger& led);
Json density_json(const DensityProfile& d);
Json envelope_split_json(const EnvelopeDecomposition& e);
Json experiment_json(const ExperimentReport& r);

}  // namespace subqm
