#include "subqm/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "subqm/errors.hpp"

namespace subqm {

Json to_json(const ReportEnvelope& e) {
  Json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["schema"] = kReportSchema;
  j["command"] = e.command;
  j["units"] = e.units;
  j["seed"] = e.seed;
  j["config"] = e.config;
  j["results"] = e.results;
  return j;
}

ReportEnvelope envelope_from_json(const Json& j) {
  if (!j.is_object() || j.value("tool", "") != kToolName) {
    throw ConfigInvalid("report: not a " + std::string(kToolName) + " envelope");
  }
  if (j.value("schema", -1) != kReportSchema) {
    throw ConfigInvalid("report: unsupported schema version");
  }
  ReportEnvelope e;
  e.command = j.at("command").get<std::string>();
  e.units = j.at("units").get<std::string>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.config = j.at("config");
  e.results = j.at("results");
  return e;
}

std::string render_json(const ReportEnvelope& e) { return to_json(e).dump(2) + "\n"; }

ReportEnvelope parse_envelope(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigInvalid("report: malformed JSON");
  return envelope_from_json(j);
}

std::string format_sci(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v,
                               std::chars_format::scientific, 16);
  return std::string(buf, r.ptr);
}

std::string render_csv(const CsvTable& t) {
  std::string out;
  for (size_t i = 0; i < t.header.size(); ++i) {
    if (i) out += ',';
    out += t.header[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_sci(row[i]);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigInvalid("csv: empty input");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw ConfigInvalid("csv: row width does not match the header");
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) {
      double v = 0.0;
      const char* b = c.data();
      const char* e = b + c.size();
      const auto r = std::from_chars(b, e, v);
      if (r.ec != std::errc{} || r.ptr != e) {
        throw ConfigInvalid("csv: cannot parse cell '" + c + "'");
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out.good()) throw IoFailure("cannot write " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoFailure("cannot read " + path);
  return buf.str();
}

Json beam_json(const BeamConfig& cfg) {
  Json j;
  j["model"] = to_string(cfg.model);
  j["V"] = cfg.V;
  j["L"] = cfg.geometry.L;
  j["L_sc"] = cfg.geometry.L_sc;
  j["delta"] = cfg.geometry.delta;
  j["T0"] = cfg.T0;
  j["pulses"] = cfg.pulses;
  j["n_per_pulse"] = cfg.n_per_pulse;
  j["m"] = cfg.m;
  j["hbar"] = cfg.hbar;
  j["a"] = cfg.a;
  if (cfg.model == BeamModel::subqm_crf) {
    j["crf_a0"] = cfg.crf_a0;
    j["crf_a1"] = cfg.crf_a1;
  }
  j["seed"] = cfg.seed;
  if (cfg.beta_jitter != 1.0) j["beta_jitter"] = cfg.beta_jitter;
  if (cfg.photon_mode) j["photon_mode"] = true;
  return j;
}

Json detector_json(const DetectorSpec& d) {
  Json j;
  switch (d.kind) {
    case DetectorSpec::Kind::hole:
      j["kind"] = "hole";
      j["x1"] = d.x1;
      j["x2"] = d.x2;
      j["r"] = d.r;
      break;
    case DetectorSpec::Kind::slit:
      j["kind"] = "slit";
      j["x1"] = d.x1;
      j["r"] = d.r;
      break;
    case DetectorSpec::Kind::half_plane:
      j["kind"] = "half_plane";
      j["sign"] = d.sign;
      break;
  }
  j["label"] = d.label;
  return j;
}

Json regime_json(const RegimeLedger& led) {
  Json rows = Json::array();
  for (const auto& e : led.entries) {
    Json r;
    r["name"] = e.name;
    r["ratio"] = e.ratio;
    r["threshold"] = e.threshold;
    r["pass"] = e.pass;
    r["relation"] = e.relation;
    rows.push_back(std::move(r));
  }
  Json j;
  j["all_pass"] = led.all_pass;
  j["entries"] = std::move(rows);
  j["notes"] = led.notes;
  return j;
}

Json density_json(const DensityProfile& d) {
  Json j;
  j["center"] = d.center;
  j["width_sq"] = d.width_sq;
  j["mass_log"] = d.mass_log;
  j["x"] = d.x;
  j["rho"] = d.rho;
  return j;
}

Json envelope_split_json(const EnvelopeDecomposition& e) {
  Json j;
  j["lambda0"] = e.lambda0;
  j["max_avg_residual"] = e.max_avg_residual;
  j["rho_bar"] = e.rho_bar;
  j["phi"] = e.phi;
  return j;
}

Json experiment_json(const ExperimentReport& r) {
  Json j;
  j["beam"] = beam_json(r.config);
  Json dets = Json::array();
  for (const auto& d : r.detectors) dets.push_back(detector_json(d));
  j["detectors"] = std::move(dets);
  j["regime"] = regime_json(r.regime);
  Json pulses = Json::array();
  for (const auto& p : r.pulses) {
    Json pj;
    pj["counts"] = p.counts;
    pj["n"] = p.n_all;
    pj["mean_x1"] = p.mean_x1;
    pj["var_x1"] = p.var_x1;
    pj["beta"] = p.beta;
    pulses.push_back(std::move(pj));
  }
  j["pulses"] = std::move(pulses);
  j["totals"] = r.totals;
  j["n_all"] = r.n_all;
  j["pooled_mean"] = r.pooled_mean;
  j["pooled_var"] = r.pooled_var;
  j["density"] = density_json(r.density);
  j["envelope"] = envelope_split_json(r.envelope);
  j["notes"] = r.notes;
  return j;
}

}  // namespace subqm
