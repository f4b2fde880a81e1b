#include "subqm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <utility>

#include <CLI11.hpp>

#include "subqm/config.hpp"
#include "subqm/detqm.hpp"
#include "subqm/errors.hpp"
#include "subqm/kernels.hpp"
#include "subqm/report.hpp"

namespace subqm {

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::string format = "csv";
  std::string units;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

bool resolve_units(const ConfigFile& cf, const CommonOpts& opt, std::string& name) {
  std::string u = cf.get_string("run", "units", "natural");
  if (!opt.units.empty()) u = opt.units;
  if (u != "natural" && u != "si") {
    throw ConfigInvalid(cf.origin() + ": units must be 'natural' or 'si'");
  }
  name = u;
  return u == "natural";
}

BeamModel parse_model(const std::string& s, const std::string& origin) {
  if (s == "qm") return BeamModel::qm;
  if (s == "subqm_rf") return BeamModel::subqm_rf;
  if (s == "subqm_crf") return BeamModel::subqm_crf;
  if (s == "detqm") return BeamModel::detqm;
  throw ConfigInvalid(origin + ": unknown model '" + s + "'");
}

// natural units default the scale constants to 1; SI configs must spell
// every one of them out (or start from a preset).
double unit_param(const ConfigFile& cf, bool natural, const std::string& section,
                  const std::string& key) {
  return natural ? cf.get_double(section, key, 1.0) : cf.get_double(section, key);
}

void emit(const CommonOpts& opt, ReportEnvelope env,
          std::vector<std::pair<std::string, CsvTable>> tables,
          const std::string& json_name, std::ostream& out) {
  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  if (ec) {
    throw IoFailure("cannot create output directory " + opt.out_dir + ": " +
                    ec.message());
  }
  Json files = Json::array();
  std::vector<std::string> written;
  if (opt.format == "csv") {
    for (auto& [name, tab] : tables) {
      const std::string fname = name + ".csv";
      write_text_file(opt.out_dir + "/" + fname, render_csv(tab));
      files.push_back(fname);
      written.push_back(fname);
    }
  } else {
    Json embedded;
    for (auto& [name, tab] : tables) {
      Json one;
      one["header"] = tab.header;
      one["rows"] = tab.rows;
      embedded[name] = std::move(one);
    }
    env.results["tables"] = std::move(embedded);
  }
  env.results["files"] = std::move(files);
  const std::string jname = json_name + ".json";
  write_text_file(opt.out_dir + "/" + jname, render_json(env));
  written.push_back(jname);
  for (const std::string& f : written) out << "wrote " << opt.out_dir << "/" << f << "\n";
}

// ---- shared wave helpers ---------------------------------------------------

QuadForm qm_free_step(const QuadForm& psi, double T, double hbar, double m) {
  QuadForm joint = qm_free_kernel(T, hbar, m);
  joint.M(0, 0) += psi.M(0, 0);
  joint.B(0) += psi.B(0);
  joint.c += psi.c;
  joint.logpref += psi.logpref;
  return marginalize(joint, {0});
}

QuadForm lift_wave(const QuadForm& psi) {
  QuadForm f = quadform_zero(2, psi.hbar);
  f.M(0, 0) = cd(0.0, 1.0) * psi.hbar;
  f.M(1, 1) = psi.M(0, 0);
  f.B(1) = psi.B(0);
  f.c = psi.c;
  f.logpref = psi.logpref;
  return f;
}

// ---- evolve ----------------------------------------------------------------

CsvTable density_to_table(const DensityProfile& d) {
  CsvTable t;
  t.header = {"x", "rho"};
  t.rows.reserve(d.x.size());
  for (size_t i = 0; i < d.x.size(); ++i) t.rows.push_back({d.x[i], d.rho[i]});
  return t;
}

struct GridMarginal {
  CsvTable table;
  double mean = 0.0;
  double width_sq = 0.0;
};

GridMarginal grid_marginal(const GridState& g) {
  const int nx = g.nx();
  std::vector<double> rho(nx, 0.0);
  for (int i = 0; i < nx; ++i) {
    double s = 0.0;
    for (int j = 0; j < g.np(); ++j) s += std::norm(g.psi(i, j));
    rho[i] = s * g.hp;
  }
  double mass = 0.0;
  for (int i = 0; i < nx; ++i) mass += ((i == 0 || i == nx - 1) ? 0.5 : 1.0) * rho[i];
  mass *= g.hx;
  if (!(mass > 0.0)) throw FitFailed("grid marginal: no mass on the grid");
  GridMarginal out;
  double mean = 0.0;
  for (int i = 0; i < nx; ++i) {
    rho[i] /= mass;
    mean += ((i == 0 || i == nx - 1) ? 0.5 : 1.0) * g.x(i) * rho[i];
  }
  mean *= g.hx;
  double var = 0.0;
  for (int i = 0; i < nx; ++i) {
    const double w = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
    var += w * (g.x(i) - mean) * (g.x(i) - mean) * rho[i];
  }
  var *= g.hx;
  out.mean = mean;
  out.width_sq = 2.0 * var;
  out.table.header = {"x", "rho"};
  out.table.rows.reserve(nx);
  for (int i = 0; i < nx; ++i) out.table.rows.push_back({g.x(i), rho[i]});
  return out;
}

std::string slice_name(long long j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "evolve_%03lld", j);
  return buf;
}

void cmd_evolve(const ConfigFile& cf, const CommonOpts& opt, std::ostream& out) {
  std::string units;
  const bool natural = resolve_units(cf, opt, units);
  const BeamModel kind = parse_model(cf.get_string("model", "kind"), cf.origin());
  if (kind == BeamModel::subqm_crf) {
    throw ConfigInvalid(cf.origin() +
                        ": evolve drives one particle; pick qm, subqm_rf, or detqm");
  }
  const double hbar = unit_param(cf, natural, "model", "hbar");
  const double m = unit_param(cf, natural, "model", "m");
  const double a =
      kind == BeamModel::subqm_rf ? unit_param(cf, natural, "model", "a") : 1.0;
  if (!(hbar > 0.0 && m > 0.0 && a > 0.0)) {
    throw ConfigInvalid(cf.origin() + ": hbar, m, a must be positive");
  }

  const double t_final = cf.get_double("evolve", "t_final");
  if (!(t_final > 0.0)) throw ConfigInvalid(cf.origin() + ": t_final must be positive");
  const long long slices = cf.get_int("evolve", "slices", 5);
  if (slices < 1 || slices > 1000) {
    throw ConfigInvalid(cf.origin() + ": slices must be in [1, 1000]");
  }
  const std::string potential = cf.get_string("evolve", "potential", "free");
  if (potential != "free" && potential != "harmonic") {
    throw ConfigInvalid(cf.origin() + ": potential must be 'free' or 'harmonic'");
  }
  if (potential == "harmonic" && kind != BeamModel::detqm) {
    throw ConfigInvalid(cf.origin() + ": the harmonic potential needs model kind detqm");
  }
  const double omega = potential == "harmonic" ? cf.get_double("evolve", "omega") : 0.0;
  if (potential == "harmonic" && !(omega > 0.0)) {
    throw ConfigInvalid(cf.origin() + ": omega must be positive");
  }
  const double dt = t_final / static_cast<double>(slices);

  Json echo;
  {
    Json mj;
    mj["kind"] = to_string(kind);
    mj["hbar"] = hbar;
    mj["m"] = m;
    if (kind == BeamModel::subqm_rf) mj["a"] = a;
    echo["model"] = std::move(mj);
    Json ej;
    ej["t_final"] = t_final;
    ej["slices"] = slices;
    ej["potential"] = potential;
    if (potential == "harmonic") ej["omega"] = omega;
    echo["evolve"] = std::move(ej);
  }

  Json rows = Json::array();
  std::vector<std::pair<std::string, CsvTable>> tables;

  if (kind == BeamModel::detqm) {
    const double x0 = cf.get_double("state", "x0", 0.0);
    const double p0 = cf.get_double("state", "p0", 0.0);
    const double sx = cf.get_double("state", "sx");
    const double sp = cf.get_double("state", "sp");
    const double kick = cf.get_double("state", "k", 0.0);
    const long long nodes = cf.get_int("state", "nodes", kGridDefaultNodes);
    if (!(sx > 0.0 && sp > 0.0)) {
      throw ConfigInvalid(cf.origin() + ": sx and sp must be positive");
    }
    if (nodes < 32 || nodes > 2048) {
      throw ConfigInvalid(cf.origin() + ": nodes must be in [32, 2048]");
    }
    Json sj;
    sj["x0"] = x0;
    sj["p0"] = p0;
    sj["sx"] = sx;
    sj["sp"] = sp;
    sj["k"] = kick;
    sj["nodes"] = nodes;
    echo["state"] = std::move(sj);
    cf.finish();

    const HamiltonianSpec H = potential == "harmonic"
                                  ? HamiltonianSpec::harmonic(m, omega)
                                  : HamiltonianSpec::free_particle(m);
    GridState g = gaussian_blob(x0, p0, sx, sp, kick, static_cast<int>(nodes),
                                static_cast<int>(nodes), hbar);
    const auto record = [&](const GridState& s) {
      const GridMarginal mar = grid_marginal(s);
      Json r;
      r["t"] = s.t;
      r["norm"] = grid_norm(s);
      r["support_area"] = support_area(s, 0.5);
      r["mean"] = mar.mean;
      r["width_sq"] = mar.width_sq;
      rows.push_back(std::move(r));
      return mar;
    };
    record(g);
    for (long long j = 1; j <= slices; ++j) {
      g = detqm_evolve(g, g.t, g.t + dt, H);
      tables.emplace_back(slice_name(j), record(g).table);
    }
  } else {
    const double x0 = cf.get_double("state", "x0", 0.0);
    const double k = cf.get_double("state", "k", 0.0);
    const double width = cf.get_double("state", "width");
    if (!(width > 0.0)) throw ConfigInvalid(cf.origin() + ": width must be positive");
    Json sj;
    sj["x0"] = x0;
    sj["k"] = k;
    sj["width"] = width;

    if (kind == BeamModel::qm) {
      echo["state"] = std::move(sj);
      cf.finish();
      QuadForm psi = gaussian_1d(x0, width, k, hbar);
      const auto record = [&](const QuadForm& w, double t) {
        const QuadForm lifted = lift_wave(w);
        const DensityProfile d = density_ip2({lifted}, default_window({lifted}));
        Json r;
        r["t"] = t;
        r["norm"] = l2_norm(w);
        r["width_sq"] = d.width_sq;
        r["mean"] = d.center;
        rows.push_back(std::move(r));
        return d;
      };
      record(psi, 0.0);
      for (long long j = 1; j <= slices; ++j) {
        psi = qm_free_step(psi, dt, hbar, m);
        tables.emplace_back(slice_name(j),
                            density_to_table(record(psi, dt * static_cast<double>(j))));
      }
    } else {
      const double kappa = cf.get_double("state", "kappa", 1.0);
      if (!(kappa > 0.0)) throw ConfigInvalid(cf.origin() + ": kappa must be positive");
      sj["kappa"] = kappa;
      echo["state"] = std::move(sj);
      cf.finish();
      const ModelParams par{hbar, m, a};
      const double dx2 = width * width / 2.0;
      const double dp2 = kappa * kappa * hbar * hbar / (4.0 * dx2);
      GaussianState s = concentrated_state(dx2, dp2, x0, k, par);
      const auto record = [&](const GaussianState& st) {
        const ConcentrationReport c = concentration(st, par);
        const DensityProfile d = density_ip2({st.f}, default_window({st.f}));
        Json r;
        r["t"] = st.t;
        r["norm"] = l2_norm(st.f);
        r["dx2"] = c.dx2;
        r["dp2"] = c.dp2;
        r["kappa"] = c.kappa;
        r["width_sq"] = d.width_sq;
        r["mean"] = d.center;
        rows.push_back(std::move(r));
        return d;
      };
      record(s);
      for (long long j = 1; j <= slices; ++j) {
        s = propagate(s, dt, par);
        tables.emplace_back(slice_name(j), density_to_table(record(s)));
      }
    }
  }

  ReportEnvelope env;
  env.command = "evolve";
  env.units = units;
  env.seed = opt.seed;
  env.config = std::move(echo);
  env.results["slices"] = std::move(rows);
  emit(opt, std::move(env), std::move(tables), "evolve_report", out);
}

// ---- slits -----------------------------------------------------------------

struct SlitStage {
  SlitSpec slit;
  double flight = 0.0;  // time to the next stage (last: to the screen)
};

void cmd_slits(const ConfigFile& cf, const CommonOpts& opt, std::ostream& out) {
  std::string units;
  const bool natural = resolve_units(cf, opt, units);
  const BeamModel kind = parse_model(cf.get_string("model", "kind"), cf.origin());
  if (kind != BeamModel::qm && kind != BeamModel::subqm_rf) {
    throw ConfigInvalid(cf.origin() + ": the slit pipeline supports qm and subqm_rf");
  }
  const double hbar = unit_param(cf, natural, "model", "hbar");
  const double m = unit_param(cf, natural, "model", "m");
  const double a =
      kind == BeamModel::subqm_rf ? unit_param(cf, natural, "model", "a") : 1.0;
  if (!(hbar > 0.0 && m > 0.0 && a > 0.0)) {
    throw ConfigInvalid(cf.origin() + ": hbar, m, a must be positive");
  }

  std::vector<SlitStage> stages;
  for (const std::string& sec : cf.numbered_sections("slit")) {
    SlitStage st;
    st.slit.center = cf.get_double(sec, "center", 0.0);
    st.slit.width = cf.get_double(sec, "width");
    st.flight = cf.get_double(sec, "flight");
    if (!(st.slit.width > 0.0)) {
      throw ConfigInvalid(cf.origin() + ": [" + sec + "] width must be positive");
    }
    if (!(st.flight > 0.0)) {
      throw ConfigInvalid(cf.origin() + ": [" + sec + "] flight must be positive");
    }
    stages.push_back(st);
  }
  if (stages.empty()) {
    throw ConfigInvalid(cf.origin() + ": need at least one [slit.N] section");
  }

  const long long nodes = cf.get_int("screen", "nodes", 4097);
  if (nodes < 33 || nodes > 100001 || nodes % 2 == 0) {
    throw ConfigInvalid(cf.origin() + ": screen nodes must be odd and in [33, 100001]");
  }
  const bool manual_window = cf.has("screen", "lo") || cf.has("screen", "hi");
  double lo = 0.0, hi = 0.0;
  if (manual_window) {
    lo = cf.get_double("screen", "lo");
    hi = cf.get_double("screen", "hi");
    if (!(hi > lo)) throw ConfigInvalid(cf.origin() + ": screen window needs hi > lo");
  }
  const std::string rule = cf.get_string("screen", "rule", "ip2");
  if (rule != "ip1" && rule != "ip2") {
    throw ConfigInvalid(cf.origin() + ": screen rule must be 'ip1' or 'ip2'");
  }

  Json echo;
  {
    Json mj;
    mj["kind"] = to_string(kind);
    mj["hbar"] = hbar;
    mj["m"] = m;
    if (kind == BeamModel::subqm_rf) mj["a"] = a;
    echo["model"] = std::move(mj);
  }

  SumState comps;
  Json extra;
  if (kind == BeamModel::subqm_rf) {
    const std::string source = cf.get_string("source", "type", "relaxed");
    const double k = cf.get_double("source", "k", 0.0);
    if (source != "relaxed" && source != "uniform") {
      throw ConfigInvalid(cf.origin() + ": source type must be 'relaxed' or 'uniform'");
    }
    if (source == "uniform" && k != 0.0) {
      throw ConfigInvalid(cf.origin() + ": the uniform source carries no wave number");
    }
    Json srcj;
    srcj["type"] = source;
    srcj["k"] = k;
    echo["source"] = std::move(srcj);

    const ModelParams par{hbar, m, a};
    GaussianState s = source == "relaxed" ? relaxed_beam(par, k) : uniform_beam(par);
    for (const SlitStage& st : stages) {
      s = apply_slit(s, st.slit.center, st.slit.width, par);
      s = propagate(s, st.flight, par);
    }
    const ConcentrationReport c = concentration(s, par);
    extra["dx2"] = c.dx2;
    extra["dp2"] = c.dp2;
    extra["kappa"] = c.kappa;
    comps.push_back(s.f);
  } else {
    QuadForm psi =
        gaussian_1d(stages[0].slit.center, stages[0].slit.width, 0.0, hbar);
    for (size_t i = 1; i < stages.size(); ++i) {
      psi = qm_free_step(psi, stages[i - 1].flight, hbar, m);
      psi = multiply(psi,
                     gaussian_1d(stages[i].slit.center, stages[i].slit.width, 0.0, hbar));
    }
    psi = qm_free_step(psi, stages.back().flight, hbar, m);
    comps.push_back(lift_wave(psi));
  }

  Json slitj = Json::array();
  for (const SlitStage& st : stages) {
    Json sj;
    sj["center"] = st.slit.center;
    sj["width"] = st.slit.width;
    sj["flight"] = st.flight;
    slitj.push_back(std::move(sj));
  }
  echo["slits"] = std::move(slitj);
  {
    Json scj;
    scj["nodes"] = nodes;
    scj["rule"] = rule;
    if (manual_window) {
      scj["lo"] = lo;
      scj["hi"] = hi;
    }
    echo["screen"] = std::move(scj);
  }
  cf.finish();

  const GridWindow win = manual_window
                             ? GridWindow{lo, hi, static_cast<int>(nodes)}
                             : default_window(comps, 10.0, static_cast<int>(nodes));
  const DensityProfile rho =
      rule == "ip2" ? density_ip2(comps, win) : density_ip1(comps, win);

  ReportEnvelope env;
  env.command = "slits";
  env.units = units;
  env.seed = opt.seed;
  env.config = std::move(echo);
  env.results["center"] = rho.center;
  env.results["width_sq"] = rho.width_sq;
  env.results["mass_log"] = rho.mass_log;
  env.results["visibility"] = visibility(rho);
  env.results["maxima"] = local_maxima(rho);
  for (auto& [key, val] : extra.items()) env.results[key] = val;
  std::vector<std::pair<std::string, CsvTable>> tables;
  tables.emplace_back("screen", density_to_table(rho));
  emit(opt, std::move(env), std::move(tables), "slits_report", out);
}

// ---- experiment ------------------------------------------------------------

BeamConfig load_beam(const ConfigFile& cf, bool natural, const CommonOpts& opt) {
  BeamConfig c;
  const std::string preset = cf.get_string("beam", "preset", "");
  const bool from_preset = !preset.empty();
  if (from_preset) {
    if (preset == "electron_ns") c = preset_electron_ns();
    else if (preset == "electron_10ps") c = preset_electron_10ps();
    else if (preset == "photon") c = preset_photon();
    else throw ConfigInvalid(cf.origin() + ": unknown preset '" + preset + "'");
  }
  if (cf.has("beam", "model")) {
    c.model = parse_model(cf.get_string("beam", "model"), cf.origin());
  }
  if (from_preset) {
    c.V = cf.get_double("beam", "V", c.V);
    c.geometry.L = cf.get_double("beam", "L", c.geometry.L);
    c.geometry.L_sc = cf.get_double("beam", "L_sc", c.geometry.L_sc);
    c.geometry.delta = cf.get_double("beam", "delta", c.geometry.delta);
    c.T0 = cf.get_double("beam", "T0", c.T0);
    c.pulses = static_cast<int>(cf.get_int("beam", "pulses", c.pulses));
    c.n_per_pulse = cf.get_int("beam", "n_per_pulse", c.n_per_pulse);
    c.hbar = cf.get_double("beam", "hbar", c.hbar);
    c.m = cf.get_double("beam", "m", c.m);
    c.a = cf.get_double("beam", "a", c.a);
  } else {
    c.V = cf.get_double("beam", "V");
    c.geometry.L = cf.get_double("beam", "L");
    c.geometry.L_sc = cf.get_double("beam", "L_sc");
    c.geometry.delta = cf.get_double("beam", "delta");
    c.T0 = cf.get_double("beam", "T0");
    const long long pulses = cf.get_int("beam", "pulses");
    if (pulses < 1 || pulses > std::numeric_limits<int>::max()) {
      throw ConfigInvalid(cf.origin() + ": pulses out of range");
    }
    c.pulses = static_cast<int>(pulses);
    c.n_per_pulse = cf.get_int("beam", "n_per_pulse");
    c.hbar = unit_param(cf, natural, "beam", "hbar");
    c.m = unit_param(cf, natural, "beam", "m");
    const bool needs_a =
        c.model == BeamModel::subqm_rf || c.model == BeamModel::subqm_crf;
    c.a = needs_a ? unit_param(cf, natural, "beam", "a")
                  : cf.get_double("beam", "a", 1.0);
  }
  if (c.model == BeamModel::subqm_crf) {
    c.crf_a0 = from_preset ? cf.get_double("beam", "crf_a0", c.crf_a0)
                           : cf.get_double("beam", "crf_a0");
    c.crf_a1 = from_preset ? cf.get_double("beam", "crf_a1", c.crf_a1)
                           : cf.get_double("beam", "crf_a1");
  }
  c.beta_jitter = cf.get_double("beam", "beta_jitter", c.beta_jitter);
  c.photon_mode = cf.get_bool("beam", "photon_mode", c.photon_mode);
  c.seed = cf.get_u64("beam", "seed", c.seed);
  if (opt.seed_set) c.seed = opt.seed;
  return c;
}

std::vector<DetectorSpec> load_detectors(const ConfigFile& cf) {
  std::vector<DetectorSpec> out;
  int i = 1;
  for (const std::string& sec : cf.numbered_sections("detector")) {
    const std::string kind = cf.get_string(sec, "kind");
    const std::string label = cf.get_string(sec, "label", "D" + std::to_string(i));
    if (kind == "slit") {
      out.push_back(
          DetectorSpec::slit(cf.get_double(sec, "x1"), cf.get_double(sec, "r"), label));
    } else if (kind == "hole") {
      out.push_back(DetectorSpec::hole(cf.get_double(sec, "x1"),
                                       cf.get_double(sec, "x2"),
                                       cf.get_double(sec, "r"), label));
    } else if (kind == "half_plane") {
      const long long sign = cf.get_int(sec, "sign");
      if (sign != 1 && sign != -1) {
        throw ConfigInvalid(cf.origin() + ": [" + sec + "] sign must be 1 or -1");
      }
      out.push_back(DetectorSpec::half_plane(static_cast<int>(sign), label));
    } else {
      throw ConfigInvalid(cf.origin() + ": [" + sec + "] unknown detector kind '" +
                          kind + "'");
    }
    ++i;
  }
  return out;
}

Json fraction_json(const Fraction& f) {
  Json j;
  j["hits"] = f.hits;
  j["total"] = f.total;
  j["value"] = f.value;
  j["ci_lo"] = f.ci_lo;
  j["ci_hi"] = f.ci_hi;
  return j;
}

CsvTable screen_table(const ExperimentReport& r) {
  CsvTable t;
  t.header = {"x", "rho", "rho_bar", "phi"};
  t.rows.reserve(r.density.x.size());
  for (size_t i = 0; i < r.density.x.size(); ++i) {
    t.rows.push_back({r.density.x[i], r.density.rho[i], r.envelope.rho_bar[i],
                      r.envelope.phi[i]});
  }
  return t;
}

CsvTable pulses_table(const ExperimentReport& r) {
  CsvTable t;
  t.header = {"pulse"};
  for (size_t d = 0; d < r.detectors.size(); ++d) {
    t.header.push_back("count_" + std::to_string(d));
  }
  t.header.insert(t.header.end(), {"n", "mean_x1", "var_x1", "beta"});
  for (size_t i = 0; i < r.pulses.size(); ++i) {
    const PulseResult& p = r.pulses[i];
    std::vector<double> row;
    row.push_back(static_cast<double>(i));
    for (long cval : p.counts) row.push_back(static_cast<double>(cval));
    row.insert(row.end(), {static_cast<double>(p.n_all), p.mean_x1, p.var_x1, p.beta});
    t.rows.push_back(std::move(row));
  }
  return t;
}

void cmd_experiment(const ConfigFile& cf, const CommonOpts& opt, std::ostream& out) {
  std::string units;
  const bool natural = resolve_units(cf, opt, units);
  const long long index = cf.get_int("experiment", "index");
  if (index < 1 || index > 6) {
    throw ConfigInvalid(cf.origin() + ": experiment index must be in [1, 6]");
  }
  const BeamConfig beam = load_beam(cf, natural, opt);
  const std::vector<DetectorSpec> dets = load_detectors(cf);
  cf.finish();

  static const char* kNames[] = {"",            "width",        "detectors",
                                 "fluctuation", "pulse_centers", "pulse_counts",
                                 "half_plane"};
  const bool takes_detectors = index == 2 || index == 3 || index == 5;
  if (!takes_detectors && !dets.empty()) {
    throw ConfigInvalid(cf.origin() + ": experiment " + std::to_string(index) +
                        " takes no [detector.N] sections");
  }

  Json echo;
  echo["experiment"] = index;
  echo["beam"] = beam_json(beam);
  Json dj = Json::array();
  for (const auto& d : dets) dj.push_back(detector_json(d));
  echo["detectors"] = std::move(dj);

  ReportEnvelope env;
  env.command = "experiment";
  env.units = units;
  env.seed = beam.seed;
  env.config = std::move(echo);
  env.results["experiment"] = index;
  env.results["name"] = kNames[index];

  std::vector<std::pair<std::string, CsvTable>> tables;
  const auto add_run_tables = [&tables](const ExperimentReport& r) {
    tables.emplace_back("density", screen_table(r));
    tables.emplace_back("pulses", pulses_table(r));
  };

  switch (index) {
    case 1: {
      const WidthIndicator w = exp1_concentration(beam);
      Json j;
      j["width_sq"] = w.width_sq;
      j["width_sq_qm"] = w.width_sq_qm;
      j["ratio"] = w.ratio;
      j["analytic"] = w.analytic;
      j["analytic_qm"] = w.analytic_qm;
      j["analytic_ratio"] = w.analytic_ratio;
      j["pass"] = w.pass;
      j["run"] = experiment_json(w.run);
      j["run_qm"] = experiment_json(w.run_qm);
      env.results["indicator"] = std::move(j);
      add_run_tables(w.run);
      tables.emplace_back("density_qm", screen_table(w.run_qm));
      break;
    }
    case 2: {
      const DetectorIndicator d = exp2_detectors(beam, dets);
      Json j;
      j["side"] = fraction_json(d.side);
      j["side_qm"] = fraction_json(d.side_qm);
      j["central"] = fraction_json(d.central);
      j["central_qm"] = fraction_json(d.central_qm);
      j["z_side"] = d.z_side;
      j["z_central"] = d.z_central;
      j["pass_side"] = d.pass_side;
      j["pass_central"] = d.pass_central;
      j["degenerate"] = d.degenerate;
      j["run"] = experiment_json(d.run);
      j["run_qm"] = experiment_json(d.run_qm);
      env.results["indicator"] = std::move(j);
      add_run_tables(d.run);
      tables.emplace_back("density_qm", screen_table(d.run_qm));
      break;
    }
    case 3: {
      const FluctuationIndicator f = exp3_fluctuation(beam, dets);
      Json j;
      j["side_counts"] = f.side_counts;
      j["mean"] = f.mean;
      j["variance"] = f.variance;
      j["poisson_bound"] = f.poisson_bound;
      j["threshold"] = f.threshold;
      j["confidence"] = f.confidence;
      j["pass"] = f.pass;
      j["run"] = experiment_json(f.run);
      env.results["indicator"] = std::move(j);
      add_run_tables(f.run);
      break;
    }
    case 4: {
      const CenterIndicator c = exp4_pulse_centers(beam);
      Json j;
      j["centers"] = c.centers;
      j["r0_sq"] = c.r0_sq;
      j["dispersion"] = c.dispersion;
      j["r0_sq_mean"] = c.r0_sq_mean;
      j["indicator"] = c.indicator;
      j["model_score"] = c.model_score;
      j["pass"] = c.pass;
      j["run"] = experiment_json(c.run);
      env.results["indicator"] = std::move(j);
      add_run_tables(c.run);
      break;
    }
    case 5:
    case 6: {
      const PulseCountIndicator p =
          index == 5 ? exp5_pulse_counts(beam, dets) : exp6_halfplane(beam);
      Json j;
      j["n_plus"] = p.n_plus;
      j["n_minus"] = p.n_minus;
      j["nbar_plus"] = p.nbar_plus;
      j["nbar_minus"] = p.nbar_minus;
      j["spread_plus"] = p.spread_plus;
      j["spread_minus"] = p.spread_minus;
      j["spread_threshold"] = p.spread_threshold;
      j["balance_lhs"] = p.balance_lhs;
      j["balance_rhs"] = p.balance_rhs;
      j["pass_spread"] = p.pass_spread;
      j["pass_balance"] = p.pass_balance;
      j["pass"] = p.pass;
      j["run"] = experiment_json(p.run);
      env.results["indicator"] = std::move(j);
      add_run_tables(p.run);
      break;
    }
    default:
      break;
  }
  emit(opt, std::move(env), std::move(tables), "experiment_report", out);
}

// ---- relax -----------------------------------------------------------------

void cmd_relax(const ConfigFile& cf, const CommonOpts& opt, std::ostream& out) {
  std::string units;
  const bool natural = resolve_units(cf, opt, units);
  const double hbar = unit_param(cf, natural, "model", "hbar");
  const double m = unit_param(cf, natural, "model", "m");
  const double a = unit_param(cf, natural, "model", "a");
  if (!(hbar > 0.0 && m > 0.0 && a > 0.0)) {
    throw ConfigInvalid(cf.origin() + ": hbar, m, a must be positive");
  }
  const double bt_max = cf.get_double("relax", "beta_t_max", 10.0);
  const long long points = cf.get_int("relax", "points", 11);
  const double x0 = cf.get_double("relax", "x0", 0.0);
  const double k = cf.get_double("relax", "k", 0.0);
  const double width = cf.get_double("relax", "width", 1.0);
  if (!(bt_max > 0.0)) throw ConfigInvalid(cf.origin() + ": beta_t_max must be positive");
  if (points < 2 || points > 100000) {
    throw ConfigInvalid(cf.origin() + ": points must be in [2, 100000]");
  }
  if (!(width > 0.0)) throw ConfigInvalid(cf.origin() + ": width must be positive");
  cf.finish();

  const ModelParams par{hbar, m, a};
  const double beta = par.beta();
  const QuadForm phi1 = gaussian_1d(x0, width, k, hbar);

  CsvTable table;
  table.header = {"beta_t", "norm", "grad_norm_sq"};
  std::vector<double> fit_t, fit_y;
  double norm0 = 0.0, norm_drift = 0.0;
  for (long long j = 0; j < points; ++j) {
    const double bt = bt_max * static_cast<double>(j) / static_cast<double>(points - 1);
    const double t = bt / beta;
    const DecayPoint d = relaxation_decay(phi1, t, par);
    table.rows.push_back({bt, d.norm, d.grad_norm * d.grad_norm});
    if (j == 0) norm0 = d.norm;
    norm_drift = std::max(norm_drift, std::abs(d.norm / norm0 - 1.0));
    if (j > 0 && bt >= std::min(1.0, bt_max / 2.0) && d.grad_norm > 0.0) {
      fit_t.push_back(t);
      fit_y.push_back(2.0 * std::log(d.grad_norm));
    }
  }

  ReportEnvelope env;
  env.command = "relax";
  env.units = units;
  env.seed = opt.seed;
  {
    Json mj;
    mj["hbar"] = hbar;
    mj["m"] = m;
    mj["a"] = a;
    env.config["model"] = std::move(mj);
    Json rj;
    rj["beta_t_max"] = bt_max;
    rj["points"] = points;
    rj["x0"] = x0;
    rj["k"] = k;
    rj["width"] = width;
    env.config["relax"] = std::move(rj);
  }
  env.results["beta"] = beta;
  env.results["tau"] = par.tau();
  env.results["norm_drift"] = norm_drift;
  env.results["fit_points"] = fit_t.size();
  if (fit_t.size() >= 2) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(fit_t.size());
    for (size_t i = 0; i < fit_t.size(); ++i) {
      sx += fit_t[i];
      sy += fit_y[i];
      sxx += fit_t[i] * fit_t[i];
      sxy += fit_t[i] * fit_y[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    env.results["slope"] = slope;
    env.results["slope_over_beta"] = slope / beta;
  }
  std::vector<std::pair<std::string, CsvTable>> tables;
  tables.emplace_back("relax", std::move(table));
  emit(opt, std::move(env), std::move(tables), "relax_report", out);
}

// ---- regime ----------------------------------------------------------------

void cmd_regime(const ConfigFile& cf, const CommonOpts& opt, std::ostream& out) {
  std::string units;
  const bool natural = resolve_units(cf, opt, units);
  const BeamConfig beam = load_beam(cf, natural, opt);
  const std::vector<DetectorSpec> dets = load_detectors(cf);
  cf.finish();

  const RegimeLedger led = regime_check(beam, dets);
  out << "regime check: model=" << to_string(beam.model) << " units=" << units << "\n";
  char line[256];
  for (const auto& e : led.entries) {
    std::snprintf(line, sizeof line, "  %-26s %12.4e  <= %-8.3g %s\n", e.name.c_str(),
                  e.ratio, e.threshold, e.pass ? "pass" : "FAIL");
    out << line;
    out << "      " << e.relation << "\n";
  }
  out << "overall: " << (led.all_pass ? "PASS" : "FAIL") << "\n";
  for (const std::string& n : led.notes) out << "note: " << n << "\n";
}

int dispatch(const std::string& cmd, const CommonOpts& opt, std::ostream& out,
             std::ostream& err) {
  try {
    const ConfigFile cf = ConfigFile::parse_file(opt.config_path);
    if (cmd == "evolve") cmd_evolve(cf, opt, out);
    else if (cmd == "slits") cmd_slits(cf, opt, out);
    else if (cmd == "experiment") cmd_experiment(cf, opt, out);
    else if (cmd == "relax") cmd_relax(cf, opt, out);
    else cmd_regime(cf, opt, out);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::config: return 2;
      case ErrorKind::numeric: return 3;
      case ErrorKind::io: return 4;
    }
    return 3;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"phase-space beam dynamics toolkit", "subqm"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonOpts opt;
  const auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "config file path")->required();
    sub->add_option("-o,--out", opt.out_dir, "output directory");
    sub->add_option("-f,--format", opt.format, "plot-data format")
        ->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("-u,--units", opt.units, "units mode override")
        ->check(CLI::IsMember({"si", "natural"}));
    sub->add_option("-s,--seed", opt.seed, "seed override");
  };
  add_common(app.add_subcommand("evolve", "propagate one state and snapshot it"));
  add_common(app.add_subcommand("slits", "send a beam through a slit pipeline"));
  add_common(app.add_subcommand("experiment", "run a counting experiment"));
  add_common(app.add_subcommand("relax", "momentum relaxation decay table"));
  add_common(app.add_subcommand("regime", "validity ledger for an operating point"));

  std::vector<const char*> argv;
  argv.push_back(kToolName);
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  opt.seed_set = sub->count("--seed") > 0;
  return dispatch(sub->get_name(), opt, out, err);
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace subqm
