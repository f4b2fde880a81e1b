#include "subqm/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "subqm/errors.hpp"
#include "subqm/parallel.hpp"

namespace subqm {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLightSpeed = 2.99792458e8;
constexpr std::uint64_t kBootstrapStream = 0xb005'74a9'0000'0001ull;
constexpr int kGridNodes = 4097;
constexpr int kKeepPulseDensities = 16;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void validate_config(const BeamConfig& cfg, const std::vector<SlitSpec>& slits) {
  if (!(cfg.V > 0.0)) throw ConfigInvalid("beam: speed must be positive");
  if (!(cfg.geometry.L > 0.0) || !(cfg.geometry.L_sc > 0.0)) {
    throw ConfigInvalid("beam: flight lengths must be positive");
  }
  if (!(cfg.geometry.delta > 0.0)) throw ConfigInvalid("beam: slit width must be positive");
  if (!(cfg.T0 > 0.0)) throw ConfigInvalid("beam: pulse duration must be positive");
  if (cfg.pulses < 1) throw ConfigInvalid("beam: need at least one pulse");
  if (cfg.n_per_pulse < 1) throw ConfigInvalid("beam: need at least one particle per pulse");
  if (!(cfg.m > 0.0) || !(cfg.hbar > 0.0)) {
    throw ConfigInvalid("beam: mass and hbar must be positive");
  }
  if (!(cfg.a > 0.0)) throw ConfigInvalid("beam: momentum-transfer constant must be positive");
  if (!(cfg.beta_jitter >= 1.0)) throw ConfigInvalid("beam: jitter factor must be >= 1");
  if (cfg.beta_jitter > 1.0 && cfg.model != BeamModel::subqm_rf) {
    throw ConfigInvalid("beam: relaxation jitter applies to the single-particle model only");
  }
  if (cfg.model == BeamModel::subqm_crf) {
    const bool a0_ok = cfg.crf_a0 > 0.0 || std::isinf(cfg.crf_a0);
    if (!a0_ok || !(cfg.crf_a1 > 0.0)) {
      throw ConfigInvalid("beam: pulse-correlated model needs positive split constants");
    }
    if (cfg.n_per_pulse < 2) {
      throw ConfigInvalid("beam: pulse-correlated model needs at least two particles per pulse");
    }
    if (cfg.n_per_pulse > static_cast<long>(std::numeric_limits<int>::max())) {
      throw ConfigInvalid("beam: pulse size too large");
    }
  }
  if (slits.empty()) throw ConfigInvalid("beam: need at least one preparation slit");
  for (const auto& s : slits) {
    if (!(s.width > 0.0)) throw ConfigInvalid("beam: slit widths must be positive");
  }
  for (double v : {cfg.V, cfg.T0, cfg.geometry.L, cfg.geometry.L_sc, cfg.geometry.delta,
                   cfg.m, cfg.hbar, cfg.a}) {
    if (!std::isfinite(v)) throw ConfigInvalid("beam: parameters must be finite");
  }
}

// Single-dof phase-space chain: beam through the slit sequence and the final
// flight to the screen, everything on the exact kernel.
QuadForm chain_rf(const ModelParams& par, const std::vector<SlitSpec>& slits, double T,
                  double T_sc) {
  GaussianState s = uniform_beam(par);
  for (size_t i = 0; i < slits.size(); ++i) {
    if (i > 0) s = propagate(s, T, par);
    s = apply_slit(s, slits[i].center, slits[i].width, par);
  }
  s = propagate(s, T_sc, par);
  return s.f;
}

// Same chain stopped after the last slit (the prepared state).
QuadForm prepared_rf(const ModelParams& par, const std::vector<SlitSpec>& slits, double T) {
  GaussianState s = uniform_beam(par);
  for (size_t i = 0; i < slits.size(); ++i) {
    if (i > 0) s = propagate(s, T, par);
    s = apply_slit(s, slits[i].center, slits[i].width, par);
  }
  return s.f;
}

QuadForm qm_free_step(const QuadForm& psi, double T, double hbar, double m) {
  QuadForm joint = qm_free_kernel(T, hbar, m);
  joint.M(0, 0) += psi.M(0, 0);
  joint.B(0) += psi.B(0);
  joint.c += psi.c;
  joint.logpref += psi.logpref;
  return marginalize(joint, {0});
}

// Position-space wave through the same geometry under free unitary evolution.
QuadForm chain_qm(double hbar, double m, const std::vector<SlitSpec>& slits, double T,
                  double T_sc) {
  QuadForm psi = gaussian_1d(slits[0].center, slits[0].width, 0.0, hbar);
  for (size_t i = 1; i < slits.size(); ++i) {
    psi = qm_free_step(psi, T, hbar, m);
    psi = multiply(psi, gaussian_1d(slits[i].center, slits[i].width, 0.0, hbar));
  }
  return qm_free_step(psi, T_sc, hbar, m);
}

// Lift a 1-variable position wave to the (p, x) pair with a damped dummy
// momentum factor, so the shared density machinery applies unchanged.
QuadForm lift_wave(const QuadForm& psi) {
  QuadForm f = quadform_zero(2, psi.hbar);
  f.M(0, 0) = cd(0.0, 1.0) * psi.hbar;
  f.M(1, 1) = psi.M(0, 0);
  f.B(1) = psi.B(0);
  f.c = psi.c;
  f.logpref = psi.logpref;
  return f;
}

// Deterministic transport: each amplitude rides its classical trajectory, so
// free flight is the exact shear x -> x + p T / m and nothing spreads.
QuadForm chain_detqm(const ModelParams& par, const std::vector<SlitSpec>& slits, double T,
                     double T_sc) {
  const double d0 = slits[0].width;
  // Matched source at the first slit: tightest packet the slit admits.
  GaussianState s = concentrated_state(d0 * d0, par.hbar * par.hbar / (4.0 * d0 * d0), 0.0,
                                       0.0, par);
  auto shear = [&](const QuadForm& f, double dt) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(2, 2);
    L(1, 0) = -dt / par.m;
    return substitute_linear(f, L);
  };
  for (size_t i = 0; i < slits.size(); ++i) {
    if (i > 0) s.f = shear(s.f, T);
    s = apply_slit(s, slits[i].center, slits[i].width, par);
  }
  s.f = shear(s.f, T_sc);
  return s.f;
}

DensityProfile gaussian_profile(double mean, double var, const GridWindow& win) {
  DensityProfile d;
  d.x.resize(win.n);
  d.rho.resize(win.n);
  const double h = (win.hi - win.lo) / (win.n - 1);
  const double norm = 1.0 / std::sqrt(2.0 * kPi * var);
  for (int i = 0; i < win.n; ++i) {
    d.x[i] = win.lo + h * i;
    const double u = d.x[i] - mean;
    d.rho[i] = norm * std::exp(-0.5 * u * u / var);
  }
  d.center = mean;
  d.width_sq = 2.0 * var;
  d.mass_log = 0.0;
  return d;
}

GridWindow widen(const GridWindow& base, double lo, double hi) {
  return {std::min(base.lo, lo), std::max(base.hi, hi), base.n};
}

struct Preparation {
  // Per-pulse screen densities are drawn from these; meaning depends on model.
  DensityProfile screen;        // single-particle screen density (beta nominal)
  DensityProfile mean_screen;   // pulse-correlated: scaled common-drift density
  GridWindow window{0.0, 1.0, kGridNodes};
  double sqrt_n = 1.0;
  double drift_var = 0.0;       // variance of the per-pulse common drift
};

Preparation prepare(const BeamConfig& cfg, const std::vector<SlitSpec>& slits) {
  Preparation prep;
  const double T = cfg.T(), T_sc = cfg.T_sc();
  switch (cfg.model) {
    case BeamModel::subqm_rf: {
      const QuadForm f = chain_rf(cfg.params(), slits, T, T_sc);
      GridWindow win = default_window({f}, 10.0, kGridNodes);
      if (cfg.beta_jitter > 1.0) {
        // Cover the densities at the jitter extremes as well.
        for (double fac : {cfg.beta_jitter, 1.0 / cfg.beta_jitter}) {
          ModelParams par{cfg.hbar, cfg.m, cfg.a / (fac * fac)};
          const QuadForm g = chain_rf(par, slits, T, T_sc);
          const GridWindow w2 = default_window({g}, 10.0, kGridNodes);
          win = widen(win, w2.lo, w2.hi);
        }
      }
      prep.window = win;
      prep.screen = density_ip2({f}, win);
      break;
    }
    case BeamModel::qm: {
      const QuadForm psi = chain_qm(cfg.hbar, cfg.m, slits, T, T_sc);
      prep.window = default_window({lift_wave(psi)}, 10.0, kGridNodes);
      prep.screen = density_ip2({lift_wave(psi)}, prep.window);
      break;
    }
    case BeamModel::detqm: {
      const QuadForm f = chain_detqm(cfg.params(), slits, T, T_sc);
      const Moments mom = moments(f);
      const double mean = mom.mean(1), var = mom.cov(1, 1);
      prep.window = GridWindow{mean - 10.0 * std::sqrt(2.0 * var),
                               mean + 10.0 * std::sqrt(2.0 * var), kGridNodes};
      prep.screen = gaussian_profile(mean, var, prep.window);
      break;
    }
    case BeamModel::subqm_crf: {
      const CrfParams cp = cfg.crf_params();
      prep.sqrt_n = std::sqrt(static_cast<double>(cp.n));
      std::vector<SlitSpec> rel_slits = slits, mean_slits = slits;
      for (auto& s : rel_slits) s.center = 0.0;
      for (auto& s : mean_slits) s.center *= prep.sqrt_n;
      const QuadForm frel = chain_rf(cp.relative_params(), rel_slits, T, T_sc);
      const QuadForm fmean = chain_rf(cp.mean_params(), mean_slits, T, T_sc);
      const GridWindow rel_win = default_window({frel}, 10.0, kGridNodes);
      const GridWindow mean_win = default_window({fmean}, 10.0, kGridNodes);
      prep.screen = density_ip2({frel}, rel_win);
      prep.mean_screen = density_ip2({fmean}, mean_win);
      prep.drift_var = 0.5 * prep.mean_screen.width_sq / static_cast<double>(cp.n);
      const double drift_center = prep.mean_screen.center / prep.sqrt_n;
      const double reach = 10.0 * std::sqrt(0.5 * prep.screen.width_sq + prep.drift_var);
      const double mid = prep.screen.center + drift_center;
      prep.window = GridWindow{mid - reach, mid + reach, kGridNodes};
      break;
    }
  }
  return prep;
}

double mixture_mean(const std::vector<PulseResult>& pulses, long n_all) {
  double acc = 0.0;
  for (const auto& p : pulses) acc += p.mean_x1 * static_cast<double>(p.n_all);
  return n_all > 0 ? acc / static_cast<double>(n_all) : 0.0;
}

double mixture_var(const std::vector<PulseResult>& pulses, long n_all, double mean) {
  double acc = 0.0;
  for (const auto& p : pulses) {
    acc += static_cast<double>(p.n_all) *
           (p.var_x1 + (p.mean_x1 - mean) * (p.mean_x1 - mean));
  }
  return n_all > 0 ? acc / static_cast<double>(n_all) : 0.0;
}

}  // namespace

std::string to_string(BeamModel m) {
  switch (m) {
    case BeamModel::qm: return "qm";
    case BeamModel::subqm_rf: return "subqm_rf";
    case BeamModel::subqm_crf: return "subqm_crf";
    case BeamModel::detqm: return "detqm";
  }
  return "?";
}

CrfParams BeamConfig::crf_params() const {
  return make_crf_params(static_cast<int>(n_per_pulse), crf_a0, crf_a1, m, hbar);
}

std::vector<SlitSpec> standard_slits(const BeamConfig& cfg) {
  return {{0.0, cfg.geometry.delta}, {0.0, cfg.geometry.delta}};
}

DetectorSpec DetectorSpec::hole(double x1, double x2, double r, std::string label) {
  if (!(r > 0.0)) throw ConfigInvalid("detector: radius must be positive");
  DetectorSpec d;
  d.kind = Kind::hole;
  d.x1 = x1;
  d.x2 = x2;
  d.r = r;
  d.label = std::move(label);
  return d;
}

DetectorSpec DetectorSpec::slit(double x1, double r, std::string label) {
  if (!(r > 0.0)) throw ConfigInvalid("detector: half-width must be positive");
  DetectorSpec d;
  d.kind = Kind::slit;
  d.x1 = x1;
  d.r = r;
  d.label = std::move(label);
  return d;
}

DetectorSpec DetectorSpec::half_plane(int sign, std::string label) {
  if (sign == 0) throw ConfigInvalid("detector: half-plane needs an orientation");
  DetectorSpec d;
  d.kind = Kind::half_plane;
  d.sign = sign > 0 ? 1 : -1;
  d.label = std::move(label);
  return d;
}

bool DetectorSpec::contains(double p1, double p2) const {
  switch (kind) {
    case Kind::hole: {
      const double u = p1 - x1, v = p2 - x2;
      return u * u + v * v <= r * r;
    }
    case Kind::slit:
      return std::abs(p1 - x1) <= r;
    case Kind::half_plane:
      return sign > 0 ? p1 >= 0.0 : p1 < 0.0;
  }
  return false;
}

double beam_wavelength(const BeamConfig& cfg) {
  return 2.0 * kPi * cfg.hbar / (cfg.m * cfg.V);
}

RegimeLedger regime_check(const BeamConfig& cfg, const std::vector<DetectorSpec>& detectors) {
  RegimeLedger led;
  auto add = [&led](std::string name, double ratio, double threshold, std::string relation) {
    RegimeEntry e;
    e.name = std::move(name);
    e.ratio = ratio;
    e.threshold = threshold;
    e.relation = std::move(relation);
    e.pass = ratio <= threshold * (1.0 + 1e-12);
    led.all_pass = led.all_pass && e.pass;
    led.entries.push_back(std::move(e));
  };
  const double T = cfg.T(), T_sc = cfg.T_sc();
  const double tau0 = std::sqrt(cfg.a * cfg.m);

  if (cfg.photon_mode) {
    const double reach = tau0 * kLightSpeed;
    add("flight_length", cfg.geometry.L / reach, 1.0,
        "L = " + fmt(cfg.geometry.L) + " <= tau0 c = " + fmt(reach));
    add("screen_length", cfg.geometry.L_sc / reach, 1.0,
        "L_sc = " + fmt(cfg.geometry.L_sc) + " <= tau0 c = " + fmt(reach));
    const double lmin = std::min(cfg.geometry.L, cfg.geometry.L_sc);
    add("pulse_length", kLightSpeed * cfg.T0 / lmin, 0.1,
        "c T0 = " + fmt(kLightSpeed * cfg.T0) + " << " + fmt(lmin));
    led.notes.push_back(
        "optical mode: slit-width and occupation conditions omitted; the dynamics is a "
        "nonrelativistic stand-in using the effective mass " + fmt(cfg.m) + " kg");
  } else if (cfg.model == BeamModel::subqm_crf) {
    const CrfParams cp = cfg.crf_params();
    const double tg = cp.tau0(), t1 = cp.tau1();
    add("group_relax_in_flight", tg / T, 0.1,
        "tau0 = " + fmt(tg) + " << T = " + fmt(T));
    add("group_relax_before_screen", tg / T_sc, 0.1,
        "tau0 = " + fmt(tg) + " << T_sc = " + fmt(T_sc));
    add("member_coherence", T / t1, 0.1, "T = " + fmt(T) + " << tau1 = " + fmt(t1));
    add("member_coherence_screen", T_sc / t1, 0.1,
        "T_sc = " + fmt(T_sc) + " << tau1 = " + fmt(t1));
    add("pulse_vs_group_relax", cfg.T0 / tg, 0.1,
        "T0 = " + fmt(cfg.T0) + " << tau0 = " + fmt(tg));
  } else {
    add("flight_vs_relax", T / tau0, 0.1, "T = " + fmt(T) + " << tau0 = " + fmt(tau0));
    add("screen_flight_vs_relax", T_sc / tau0, 0.1,
        "T_sc = " + fmt(T_sc) + " << tau0 = " + fmt(tau0));
    add("pulse_vs_relax", cfg.T0 / tau0, 0.1,
        "T0 = " + fmt(cfg.T0) + " << tau0 = " + fmt(tau0));
  }

  if (!cfg.photon_mode) {
    const double d2 = cfg.geometry.delta * cfg.geometry.delta;
    const double bound = T * cfg.hbar / (3.0 * cfg.m);
    add("slit_width", d2 / bound, 0.1,
        "delta^2 = " + fmt(d2) + " << T hbar / 3m = " + fmt(bound));
    const double z = cfg.model == BeamModel::subqm_crf ? T / cfg.crf_params().tau1()
                                                       : T / tau0;
    const double kappa0 =
        std::sqrt(8.0 * cfg.m * cfg.m * d2 * d2 / (T * T * cfg.hbar * cfg.hbar) +
                  4.0 / 9.0 * z * z * z * z);
    add("initial_occupation", kappa0, 0.1, "kappa0 = " + fmt(kappa0) + " << 1");
  }

  double r_min = std::numeric_limits<double>::infinity();
  for (const auto& d : detectors) {
    if (d.kind != DetectorSpec::Kind::half_plane) r_min = std::min(r_min, d.r);
  }
  if (std::isfinite(r_min)) {
    const double lam = beam_wavelength(cfg);
    add("detector_vs_wavelength", lam / r_min, 0.1,
        "lambda0 = " + fmt(lam) + " << r = " + fmt(r_min));
  }
  led.notes.push_back("beam wavelength taken as 2 pi hbar / (m V) = " +
                      fmt(beam_wavelength(cfg)));
  if (cfg.V > 0.1 * kLightSpeed) {
    led.notes.push_back("V / c = " + fmt(cfg.V / kLightSpeed) +
                        "; the dynamics is nonrelativistic");
  }
  return led;
}

EnvelopeDecomposition envelope_decompose(const DensityProfile& rho, double lambda0) {
  const int n = static_cast<int>(rho.x.size());
  if (n < 5) throw ConfigInvalid("envelope: density grid too small");
  if (!(lambda0 > 0.0)) throw ConfigInvalid("envelope: smoothing window must be positive");
  EnvelopeDecomposition env;
  env.x = rho.x;
  env.rho = rho.rho;
  env.lambda0 = lambda0;
  const double h = rho.x[1] - rho.x[0];
  const int k = std::max(1, static_cast<int>(std::lround(0.5 * lambda0 / h)));

  auto window_apply = [&](const std::vector<double>& in, auto&& op) {
    std::vector<double> out(in.size());
    for (int i = 0; i < n; ++i) {
      const int lo = std::max(0, i - k), hi = std::min(n - 1, i + k);
      out[static_cast<size_t>(i)] = op(in, lo, hi);
    }
    return out;
  };
  auto runmax = [](const std::vector<double>& v, int lo, int hi) {
    double m = v[static_cast<size_t>(lo)];
    for (int j = lo + 1; j <= hi; ++j) m = std::max(m, v[static_cast<size_t>(j)]);
    return m;
  };
  auto runavg = [](const std::vector<double>& v, int lo, int hi) {
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += v[static_cast<size_t>(j)];
    return s / static_cast<double>(hi - lo + 1);
  };

  std::vector<double> sup = window_apply(env.rho, runmax);
  env.rho_bar = window_apply(sup, runavg);
  double peak = 0.0;
  for (double v : env.rho_bar) peak = std::max(peak, v);
  const double floor = std::max(1e-300, 1e-12 * peak);
  env.phi.resize(env.rho.size());
  for (size_t i = 0; i < env.rho.size(); ++i) {
    env.phi[i] = std::clamp(env.rho[i] / std::max(env.rho_bar[i], floor), 0.0, 1.0);
  }
  std::vector<double> recon(env.rho.size());
  for (size_t i = 0; i < recon.size(); ++i) recon[i] = env.rho_bar[i] * env.phi[i];
  const std::vector<double> avg_rho = window_apply(env.rho, runavg);
  const std::vector<double> avg_recon = window_apply(recon, runavg);
  double worst = 0.0, scale = 0.0;
  for (size_t i = 0; i < avg_rho.size(); ++i) {
    worst = std::max(worst, std::abs(avg_recon[i] - avg_rho[i]));
    scale = std::max(scale, avg_rho[i]);
  }
  env.max_avg_residual = scale > 0.0 ? worst / scale : 0.0;
  return env;
}

ExperimentReport run_beam(const BeamConfig& cfg, const std::vector<SlitSpec>& slits,
                          const std::vector<DetectorSpec>& detectors) {
  validate_config(cfg, slits);
  ExperimentReport rep;
  rep.config = cfg;
  rep.detectors = detectors;
  rep.regime = regime_check(cfg, detectors);

  const Preparation prep = prepare(cfg, slits);
  bool needs_x2 = false;
  for (const auto& d : detectors) needs_x2 = needs_x2 || d.needs_x2();

  const int I = cfg.pulses;
  const long n = cfg.n_per_pulse;
  const bool jitter = cfg.beta_jitter > 1.0;
  const bool crf = cfg.model == BeamModel::subqm_crf;
  const bool keep_density = I <= kKeepPulseDensities;

  // Samplers shared by all pulses (rebuilt per pulse only under jitter).
  TabulatedSampler base_sampler(prep.screen);
  std::vector<TabulatedSampler> mean_sampler;
  if (crf) mean_sampler.emplace_back(prep.mean_screen);

  rep.pulses.resize(static_cast<size_t>(I));
  if (keep_density) rep.pulse_densities.resize(static_cast<size_t>(I));
  const double beta0 = cfg.params().beta();

  parallel_for(I, [&](int lo, int hi) {
    std::vector<double> x1, x2;
    for (int i = lo; i < hi; ++i) {
      PulseResult& pr = rep.pulses[static_cast<size_t>(i)];
      Rng rng = Rng(cfg.seed).substream(static_cast<std::uint64_t>(i));
      pr.beta = beta0;
      pr.counts.assign(detectors.size(), 0);
      pr.n_all = n;

      const TabulatedSampler* sampler = &base_sampler;
      TabulatedSampler jittered = base_sampler;
      DensityProfile pulse_density = prep.screen;
      if (jitter) {
        const double u = 2.0 * rng.next_double() - 1.0;
        const double fac = std::pow(cfg.beta_jitter, u);
        pr.beta = beta0 * fac;
        ModelParams par{cfg.hbar, cfg.m, cfg.a / (fac * fac)};
        const QuadForm f = chain_rf(par, slits, cfg.T(), cfg.T_sc());
        pulse_density = density_ip2({f}, prep.window);
        jittered = TabulatedSampler(pulse_density);
        sampler = &jittered;
      }

      double drift1 = 0.0, drift2 = 0.0;
      if (crf) {
        drift1 = mean_sampler[0].sample(rng) / prep.sqrt_n;
        if (needs_x2) drift2 = mean_sampler[0].sample(rng) / prep.sqrt_n;
      }

      x1.resize(static_cast<size_t>(n));
      if (needs_x2) x2.resize(static_cast<size_t>(n));
      for (long j = 0; j < n; ++j) {
        x1[static_cast<size_t>(j)] = sampler->sample(rng);
        if (needs_x2) x2[static_cast<size_t>(j)] = sampler->sample(rng);
      }
      if (crf) {
        // Members share the pulse drift; deviations are the centered draws,
        // so the pulse mean is the drift exactly.
        auto recenter = [&](std::vector<double>& xs, double drift) {
          double mean = 0.0;
          for (double v : xs) mean += v;
          mean /= static_cast<double>(n);
          for (double& v : xs) v += drift - mean;
        };
        recenter(x1, drift1);
        if (needs_x2) recenter(x2, drift2);
      }

      const SampleStats st = sample_stats(x1);
      pr.mean_x1 = st.mean;
      pr.var_x1 = st.var;
      for (long j = 0; j < n; ++j) {
        const double p1 = x1[static_cast<size_t>(j)];
        const double p2 = needs_x2 ? x2[static_cast<size_t>(j)] : 0.0;
        for (size_t d = 0; d < detectors.size(); ++d) {
          if (detectors[d].contains(p1, p2)) ++pr.counts[d];
        }
      }
      if (cfg.keep_positions) pr.x1 = x1;

      if (keep_density) {
        if (crf) {
          const double var =
              0.5 * prep.screen.width_sq * (1.0 - 1.0 / static_cast<double>(n));
          rep.pulse_densities[static_cast<size_t>(i)] =
              gaussian_profile(drift1, var, prep.window);
        } else {
          rep.pulse_densities[static_cast<size_t>(i)] = pulse_density;
        }
      }
    }
  });

  rep.totals.assign(detectors.size(), 0);
  rep.n_all = 0;
  for (const auto& pr : rep.pulses) {
    rep.n_all += pr.n_all;
    for (size_t d = 0; d < detectors.size(); ++d) rep.totals[d] += pr.counts[d];
  }
  rep.pooled_mean = mixture_mean(rep.pulses, rep.n_all);
  rep.pooled_var = mixture_var(rep.pulses, rep.n_all, rep.pooled_mean);

  // Report density: the expected screen density of the realized run.
  if (crf) {
    DensityProfile total = gaussian_profile(prep.screen.center, 0.5 * prep.screen.width_sq,
                                            prep.window);
    std::fill(total.rho.begin(), total.rho.end(), 0.0);
    double mean_acc = 0.0;
    const double member_var =
        0.5 * prep.screen.width_sq * (1.0 - 1.0 / static_cast<double>(n));
    for (int i = 0; i < I; ++i) {
      const double c = rep.pulses[static_cast<size_t>(i)].mean_x1;
      const DensityProfile g = gaussian_profile(c, member_var, prep.window);
      for (size_t j = 0; j < total.rho.size(); ++j) total.rho[j] += g.rho[j] / I;
      mean_acc += c / I;
    }
    total.center = mean_acc;
    double var = 0.0;
    const double h = total.x[1] - total.x[0];
    for (size_t j = 0; j < total.rho.size(); ++j) {
      var += total.rho[j] * (total.x[j] - mean_acc) * (total.x[j] - mean_acc);
    }
    total.width_sq = 2.0 * var * h;
    rep.density = total;
  } else if (jitter) {
    DensityProfile total = prep.screen;
    std::fill(total.rho.begin(), total.rho.end(), 0.0);
    int contributing = 0;
    for (int i = 0; i < I && keep_density; ++i) {
      const DensityProfile& g = rep.pulse_densities[static_cast<size_t>(i)];
      for (size_t j = 0; j < total.rho.size(); ++j) total.rho[j] += g.rho[j];
      ++contributing;
    }
    if (contributing > 0) {
      for (double& v : total.rho) v /= contributing;
      rep.density = total;
    } else {
      rep.density = prep.screen;  // too many pulses to keep; nominal-rate density
      rep.notes.push_back("density: nominal relaxation rate (per-pulse grids not kept)");
    }
  } else {
    rep.density = prep.screen;
  }
  rep.envelope = envelope_decompose(rep.density, std::max(beam_wavelength(cfg),
                                                          2.0 * (rep.density.x[1] -
                                                                 rep.density.x[0])));
  if (cfg.photon_mode) {
    rep.notes.push_back(
        "OPTICAL STAND-IN: photon runs reuse the nonrelativistic massive-particle dynamics "
        "with an effective mass; treat all quantitative output as an analogy");
  }
  return rep;
}

namespace {

struct PooledWidth {
  double width_sq = 0.0;
};

PooledWidth fit_width(const ExperimentReport& rep) {
  if (rep.n_all < 2) throw FitFailed("width fit: need at least two samples");
  if (!(rep.pooled_var > 0.0)) throw FitFailed("width fit: degenerate sample variance");
  return {2.0 * rep.pooled_var};
}

Fraction make_fraction(long hits, long total) {
  Fraction f;
  f.hits = hits;
  f.total = total;
  f.value = total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  return f;
}

// Percentile interval from resampling whole pulses with replacement.
void bootstrap_fraction(const ExperimentReport& rep, const std::vector<int>& hit_dets,
                        const std::vector<int>& total_dets, bool total_is_n_all,
                        Fraction& frac, std::uint64_t seed) {
  const int I = static_cast<int>(rep.pulses.size());
  if (I < 2) {
    frac.ci_lo = frac.ci_hi = frac.value;
    return;
  }
  constexpr int B = 200;
  Rng rng = Rng(seed).substream(kBootstrapStream);
  std::vector<double> vals;
  vals.reserve(B);
  for (int b = 0; b < B; ++b) {
    long hits = 0, total = 0;
    for (int i = 0; i < I; ++i) {
      const auto& pr = rep.pulses[static_cast<size_t>(
          rng.next_u64() % static_cast<std::uint64_t>(I))];
      for (int d : hit_dets) hits += pr.counts[static_cast<size_t>(d)];
      if (total_is_n_all) {
        total += pr.n_all;
      } else {
        for (int d : total_dets) total += pr.counts[static_cast<size_t>(d)];
      }
    }
    vals.push_back(total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0);
  }
  std::sort(vals.begin(), vals.end());
  frac.ci_lo = vals[static_cast<size_t>(std::floor(0.025 * (B - 1)))];
  frac.ci_hi = vals[static_cast<size_t>(std::ceil(0.975 * (B - 1)))];
}

// Standard error with a +1/+2 floor so exact-zero fractions keep a scale.
double fraction_se(const Fraction& f) {
  if (f.total <= 0) return 0.0;
  const double p = (static_cast<double>(f.hits) + 1.0) / (static_cast<double>(f.total) + 2.0);
  return std::sqrt(p * (1.0 - p) / static_cast<double>(f.total));
}

}  // namespace

WidthIndicator exp1_concentration(const BeamConfig& cfg) {
  if (cfg.model == BeamModel::subqm_crf) {
    throw ConfigInvalid("width comparison: use a single-particle model");
  }
  const std::vector<SlitSpec> slits = standard_slits(cfg);
  BeamConfig qm_cfg = cfg;
  qm_cfg.model = BeamModel::qm;
  WidthIndicator out;
  out.run = run_beam(cfg, slits, {});
  out.run_qm = run_beam(qm_cfg, slits, {});
  out.width_sq = fit_width(out.run).width_sq;
  out.width_sq_qm = fit_width(out.run_qm).width_sq;
  out.ratio = out.width_sq / out.width_sq_qm;

  // Closed-form laws evaluated at the prepared (post-slit) widths.
  if (cfg.model == BeamModel::subqm_rf) {
    const QuadForm prep = prepared_rf(cfg.params(), slits, cfg.T());
    const ConcentrationReport c = concentration({prep, 0.0}, cfg.params());
    out.analytic = dispersion_subqm(c.dx2, c.dp2, cfg.T_sc(), cfg.params());
  } else {
    out.analytic = out.width_sq;  // no separate law for this model; echo the fit
  }
  {
    QuadForm psi = gaussian_1d(slits[0].center, slits[0].width, 0.0, cfg.hbar);
    for (size_t i = 1; i < slits.size(); ++i) {
      psi = qm_free_step(psi, cfg.T(), cfg.hbar, cfg.m);
      psi = multiply(psi, gaussian_1d(slits[i].center, slits[i].width, 0.0, cfg.hbar));
    }
    const double im = psi.M(0, 0).imag();
    if (!(im > 0.0)) throw FitFailed("width comparison: prepared wave not localized");
    out.analytic_qm = dispersion_qm(cfg.hbar / im, cfg.T_sc(), cfg.hbar, cfg.m);
  }
  out.analytic_ratio = out.analytic / out.analytic_qm;
  out.pass = out.ratio <= 0.1;
  return out;
}

DetectorIndicator exp2_detectors(const BeamConfig& cfg,
                                 const std::vector<DetectorSpec>& dets) {
  if (dets.size() < 3) {
    throw ConfigInvalid("detector comparison: need the central detector and a side pair");
  }
  const std::vector<SlitSpec> slits = standard_slits(cfg);
  BeamConfig qm_cfg = cfg;
  qm_cfg.model = BeamModel::qm;
  DetectorIndicator out;
  out.run = run_beam(cfg, slits, dets);
  out.run_qm = run_beam(qm_cfg, slits, dets);

  auto fractions = [&dets](const ExperimentReport& rep, Fraction& side, Fraction& central,
                           std::uint64_t seed) {
    const long n0 = rep.totals[0], np = rep.totals[1], nm = rep.totals[2];
    const long denom = n0 + np + nm;
    if (denom == 0) throw ZeroCounts("detector comparison: no detector hits at all");
    side = make_fraction(np + nm, denom);
    central = make_fraction(n0, rep.n_all);
    bootstrap_fraction(rep, {1, 2}, {0, 1, 2}, false, side, seed);
    bootstrap_fraction(rep, {0}, {}, true, central, seed + 1);
  };
  fractions(out.run, out.side, out.central, cfg.seed);
  fractions(out.run_qm, out.side_qm, out.central_qm, cfg.seed);

  const double se_side = std::hypot(fraction_se(out.side), fraction_se(out.side_qm));
  const double se_central =
      std::hypot(fraction_se(out.central), fraction_se(out.central_qm));
  out.z_side = se_side > 0.0 ? (out.side_qm.value - out.side.value) / se_side : 0.0;
  out.z_central =
      se_central > 0.0 ? (out.central.value - out.central_qm.value) / se_central : 0.0;
  const double floor_s = 5.0 / std::max<long>(1, out.side.total);
  const double floor_q = 5.0 / std::max<long>(1, out.side_qm.total);
  out.degenerate = out.side.value < floor_s && out.side_qm.value < floor_q;
  out.pass_side = !out.degenerate && out.z_side >= 3.0;
  out.pass_central = !out.degenerate && out.z_central >= 3.0;
  return out;
}

FluctuationIndicator exp3_fluctuation(const BeamConfig& cfg,
                                      const std::vector<DetectorSpec>& dets) {
  if (cfg.pulses < 10) throw TooFewPulses("fluctuation test: need at least 10 pulses");
  if (dets.size() < 2) throw ConfigInvalid("fluctuation test: need the side detector pair");
  FluctuationIndicator out;
  out.run = run_beam(cfg, standard_slits(cfg), dets);
  const int I = cfg.pulses;
  out.side_counts.reserve(static_cast<size_t>(I));
  for (const auto& pr : out.run.pulses) {
    out.side_counts.push_back(pr.counts[0] + pr.counts[1]);
  }
  double mean = 0.0;
  for (long c : out.side_counts) mean += static_cast<double>(c);
  mean /= I;
  if (!(mean > 0.0)) throw ZeroCounts("fluctuation test: side detectors saw nothing");
  double var = 0.0;
  for (long c : out.side_counts) {
    var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  }
  var /= I;
  out.mean = mean;
  out.variance = var;
  out.poisson_bound = mean;
  const boost::math::chi_squared dist(static_cast<double>(I - 1));
  out.threshold = mean * boost::math::quantile(dist, out.confidence) / I;
  out.pass = out.variance > out.threshold;
  return out;
}

CenterIndicator exp4_pulse_centers(const BeamConfig& cfg) {
  if (cfg.pulses < 2) throw TooFewPulses("pulse centers: need at least two pulses");
  if (cfg.pulses > 8) {
    throw ConfigInvalid("pulse centers: center fits need at most eight pulses");
  }
  BeamConfig run_cfg = cfg;
  run_cfg.keep_positions = true;
  CenterIndicator out;
  out.run = run_beam(run_cfg, standard_slits(cfg), {});
  const int I = cfg.pulses;
  for (const auto& pr : out.run.pulses) {
    if (pr.n_all < 2 || !(pr.var_x1 > 0.0)) {
      throw FitFailed("pulse centers: a pulse has no fittable width");
    }
    out.centers.push_back(pr.mean_x1);
    out.r0_sq.push_back(pr.var_x1);
  }
  double cbar = 0.0;
  for (double c : out.centers) cbar += c;
  cbar /= I;
  for (double c : out.centers) out.dispersion += (c - cbar) * (c - cbar);
  out.dispersion /= I;
  for (double r : out.r0_sq) out.r0_sq_mean += r;
  out.r0_sq_mean /= I;
  out.indicator = out.dispersion / out.r0_sq_mean;
  out.pass = out.indicator >= 1.0;

  // One shared component against the per-pulse mixture, penalized for the
  // extra (mean, variance, weight) triples.
  const double mu = out.run.pooled_mean, v1 = out.run.pooled_var;
  double log_l1 = 0.0, log_li = 0.0;
  const double n_total = static_cast<double>(out.run.n_all);
  std::vector<double> wlog(static_cast<size_t>(I));
  for (int i = 0; i < I; ++i) {
    wlog[static_cast<size_t>(i)] =
        std::log(static_cast<double>(out.run.pulses[static_cast<size_t>(i)].n_all) /
                 n_total);
  }
  for (const auto& pr : out.run.pulses) {
    for (double x : pr.x1) {
      log_l1 += -0.5 * std::log(2.0 * kPi * v1) - 0.5 * (x - mu) * (x - mu) / v1;
      double best = -std::numeric_limits<double>::infinity();
      double acc = 0.0;
      std::vector<double> terms(static_cast<size_t>(I));
      for (int i = 0; i < I; ++i) {
        const double vi = out.r0_sq[static_cast<size_t>(i)];
        terms[static_cast<size_t>(i)] =
            wlog[static_cast<size_t>(i)] - 0.5 * std::log(2.0 * kPi * vi) -
            0.5 * (x - out.centers[static_cast<size_t>(i)]) *
                (x - out.centers[static_cast<size_t>(i)]) / vi;
        best = std::max(best, terms[static_cast<size_t>(i)]);
      }
      for (double t : terms) acc += std::exp(t - best);
      log_li += best + std::log(acc);
    }
  }
  out.model_score = 2.0 * (log_li - log_l1) - 3.0 * (I - 1) * std::log(n_total);
  return out;
}

namespace {

PulseCountIndicator pair_statistics(std::vector<double> np, std::vector<double> nm) {
  PulseCountIndicator out;
  const int I = static_cast<int>(np.size());
  out.n_plus = std::move(np);
  out.n_minus = std::move(nm);
  for (double v : out.n_plus) out.nbar_plus += v;
  for (double v : out.n_minus) out.nbar_minus += v;
  out.nbar_plus /= I;
  out.nbar_minus /= I;
  if (!(out.nbar_plus > 0.0) || !(out.nbar_minus > 0.0)) {
    throw ZeroCounts("pulse counts: a side detector saw nothing on average");
  }
  double vp = 0.0, vm = 0.0;
  for (double v : out.n_plus) vp += (v - out.nbar_plus) * (v - out.nbar_plus);
  for (double v : out.n_minus) vm += (v - out.nbar_minus) * (v - out.nbar_minus);
  vp /= I;
  vm /= I;
  out.spread_plus = std::sqrt(vp / out.nbar_plus);
  out.spread_minus = std::sqrt(vm / out.nbar_minus);
  out.spread_threshold = 1.0 + 3.0 / std::sqrt(static_cast<double>(I));
  const double nbar = std::sqrt(out.nbar_plus * out.nbar_minus);
  for (int i = 0; i < I; ++i) {
    out.balance_lhs += std::abs(out.n_plus[static_cast<size_t>(i)] * out.nbar_minus -
                                out.n_minus[static_cast<size_t>(i)] * out.nbar_plus) /
                       nbar;
  }
  out.balance_lhs /= I;
  out.balance_rhs = 2.0 * std::sqrt(nbar);
  out.pass_spread = std::max(out.spread_plus, out.spread_minus) > out.spread_threshold;
  out.pass_balance = out.balance_lhs > out.balance_rhs;
  out.pass = out.pass_spread && out.pass_balance;
  return out;
}

}  // namespace

PulseCountIndicator exp5_pulse_counts(const BeamConfig& cfg,
                                      const std::vector<DetectorSpec>& dets) {
  if (dets.size() < 2) throw ConfigInvalid("pulse counts: need the side detector pair");
  ExperimentReport rep = run_beam(cfg, standard_slits(cfg), dets);
  std::vector<double> np, nm;
  for (const auto& pr : rep.pulses) {
    np.push_back(static_cast<double>(pr.counts[0]));
    nm.push_back(static_cast<double>(pr.counts[1]));
  }
  PulseCountIndicator out = pair_statistics(std::move(np), std::move(nm));
  out.run = std::move(rep);
  return out;
}

PulseCountIndicator exp6_halfplane(const BeamConfig& cfg) {
  const std::vector<DetectorSpec> dets = {DetectorSpec::half_plane(+1, "D+"),
                                          DetectorSpec::half_plane(-1, "D-")};
  ExperimentReport rep = run_beam(cfg, standard_slits(cfg), dets);
  const int I = cfg.pulses;
  double sp = 0.0, sm = 0.0;
  for (const auto& pr : rep.pulses) {
    sp += static_cast<double>(pr.counts[0]);
    sm += static_cast<double>(pr.counts[1]);
  }
  const double total_mean = (sp + sm) / I;
  std::vector<double> np, nm;
  for (const auto& pr : rep.pulses) {
    const long tot = pr.counts[0] + pr.counts[1];
    if (tot == 0) throw ZeroCounts("half-plane counts: an empty pulse cannot be normalized");
    // Normalize each pulse to the mean intensity before testing.
    const double scale = total_mean / static_cast<double>(tot);
    np.push_back(static_cast<double>(pr.counts[0]) * scale);
    nm.push_back(static_cast<double>(pr.counts[1]) * scale);
  }
  PulseCountIndicator out = pair_statistics(std::move(np), std::move(nm));
  out.run = std::move(rep);
  return out;
}

BeamConfig preset_electron_ns() {
  BeamConfig c;
  c.model = BeamModel::subqm_rf;
  c.hbar = 1e-34;
  c.m = 1e-30;
  c.a = 1e12;  // tau0 = 1e-9 s
  c.V = 0.3 * kLightSpeed;
  c.geometry.L = c.V * 1e-10;
  c.geometry.L_sc = c.V * 1e-10;
  c.geometry.delta = 1e-8;
  c.T0 = 1e-11;
  c.pulses = 10;
  c.n_per_pulse = 10000;
  c.seed = 1;
  return c;
}

BeamConfig preset_electron_10ps() {
  BeamConfig c = preset_electron_ns();
  c.a = 1e8;  // tau0 = 1e-11 s
  c.geometry.L = c.V * 1e-12;
  c.geometry.L_sc = c.V * 1e-12;
  c.geometry.delta = 1e-9;
  c.T0 = 1e-13;
  return c;
}

BeamConfig preset_photon() {
  BeamConfig c;
  c.model = BeamModel::subqm_rf;
  c.photon_mode = true;
  c.hbar = 1e-34;
  const double omega = 2.0 * kPi * 5e14;
  c.m = c.hbar * omega / (kLightSpeed * kLightSpeed);  // effective mass ~ 3.5e-36 kg
  c.a = 1e-22 / c.m;                                   // tau0 = 1e-11 s
  c.V = kLightSpeed;
  c.geometry.L = 1e-3;
  c.geometry.L_sc = 1e-3;
  c.geometry.delta = 1e-4;
  c.T0 = 1e-13;
  c.pulses = 10;
  c.n_per_pulse = 10000;
  c.seed = 1;
  return c;
}

}  // namespace subqm
