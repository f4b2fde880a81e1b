#pragma once

// Monte-Carlo beam experiments: pulses prepared through iterated slits,
// propagated under a chosen dynamics model, sampled at a screen and tallied
// against detector sets. Provides the validity ledger for the operating
// regime and the indicator statistics of the six proposed runs.

#include <cstdint>
#include <string>
#include <vector>

#include "subqm/crf.hpp"
#include "subqm/evolution.hpp"
#include "subqm/sampling.hpp"

namespace subqm {

enum class BeamModel { qm, subqm_rf, subqm_crf, detqm };

std::string to_string(BeamModel m);

struct BeamGeometry {
  double L = 0.0;     // slit-to-slit flight length
  double L_sc = 0.0;  // last slit to screen
  double delta = 0.0; // slit amplitude width
};

struct BeamConfig {
  BeamModel model = BeamModel::subqm_rf;
  double V = 0.0;           // beam speed; flight times are L/V and L_sc/V
  double T0 = 0.0;          // pulse duration
  int pulses = 1;           // I
  long n_per_pulse = 0;     // particles per pulse
  BeamGeometry geometry;
  double m = 1.0;
  double hbar = 1.0;
  double a = 1.0;           // momentum-transfer constant, tau0 = sqrt(a m)
  double crf_a0 = 0.0;      // common-force split (subqm_crf only)
  double crf_a1 = 0.0;
  std::uint64_t seed = 0;
  double beta_jitter = 1.0; // per-pulse log-uniform spread factor (1 = off)
  bool photon_mode = false; // V = c with an effective mass; nonrelativistic stand-in
  bool keep_positions = false;

  double T() const { return geometry.L / V; }
  double T_sc() const { return geometry.L_sc / V; }
  ModelParams params() const { return {hbar, m, a}; }
  CrfParams crf_params() const;  // n = n_per_pulse; requires subqm_crf fields
};

struct SlitSpec {
  double center = 0.0;
  double width = 0.0;
};

// The standard preparation: two slits of the configured width on the beam
// axis, one flight time apart.
std::vector<SlitSpec> standard_slits(const BeamConfig& cfg);

struct DetectorSpec {
  enum class Kind { hole, slit, half_plane };
  Kind kind = Kind::slit;
  double x1 = 0.0, x2 = 0.0;  // center (holes use both coordinates)
  double r = 0.0;             // hole radius / slit half-width
  int sign = 1;               // half-plane orientation
  std::string label;

  static DetectorSpec hole(double x1, double x2, double r, std::string label = {});
  static DetectorSpec slit(double x1, double r, std::string label = {});
  static DetectorSpec half_plane(int sign, std::string label = {});

  bool contains(double p1, double p2) const;
  bool needs_x2() const { return kind == Kind::hole; }
};

struct RegimeEntry {
  std::string name;
  std::string relation;  // rendered inequality with the evaluated numbers
  double ratio = 0.0;
  double threshold = 0.1;
  bool pass = false;
};

struct RegimeLedger {
  std::vector<RegimeEntry> entries;
  bool all_pass = true;
  std::vector<std::string> notes;  // modeling assumptions and disclaimers
};

// Named inequalities the operating point must satisfy. Detector radii are
// checked against the beam wavelength when detectors are given.
RegimeLedger regime_check(const BeamConfig& cfg,
                          const std::vector<DetectorSpec>& detectors = {});

struct PulseResult {
  std::vector<long> counts;  // per detector
  long n_all = 0;
  double mean_x1 = 0.0;      // sample centroid on the screen
  double var_x1 = 0.0;       // sample variance (denominator n)
  double beta = 0.0;         // relaxation rate used for this pulse
  std::vector<double> x1;    // kept only when config.keep_positions
};

struct EnvelopeDecomposition {
  std::vector<double> x, rho, rho_bar, phi;  // rho ~= rho_bar * phi, 0 <= phi <= 1
  double lambda0 = 0.0;                      // smoothing window
  double max_avg_residual = 0.0;             // local-average reconstruction defect
};

EnvelopeDecomposition envelope_decompose(const DensityProfile& rho, double lambda0);

struct ExperimentReport {
  BeamConfig config;
  std::vector<DetectorSpec> detectors;
  RegimeLedger regime;
  std::vector<PulseResult> pulses;
  std::vector<long> totals;  // per detector, summed over pulses
  long n_all = 0;
  DensityProfile density;                       // pooled screen density
  std::vector<DensityProfile> pulse_densities;  // kept for small pulse counts
  EnvelopeDecomposition envelope;
  double pooled_mean = 0.0;
  double pooled_var = 0.0;  // across all sampled positions
  std::vector<std::string> notes;
};

// Runs the full pipeline: preparation through `slits`, flight to the screen,
// per-pulse sampling and detector tallies. Deterministic in (config, seed);
// pulses use independent substreams merged in pulse order.
ExperimentReport run_beam(const BeamConfig& cfg, const std::vector<SlitSpec>& slits,
                          const std::vector<DetectorSpec>& detectors);

// De Broglie wavelength 2 pi hbar / (m V) used by the regime ledger.
double beam_wavelength(const BeamConfig& cfg);

struct WidthIndicator {
  double width_sq = 0.0;     // Monte-Carlo screen fit, amplitude convention
  double width_sq_qm = 0.0;  // paired run under qm dynamics
  double ratio = 0.0;
  double analytic = 0.0;     // closed-form laws at the prepared widths
  double analytic_qm = 0.0;
  double analytic_ratio = 0.0;
  bool pass = false;  // ratio <= 0.1
  ExperimentReport run, run_qm;
};

WidthIndicator exp1_concentration(const BeamConfig& cfg);

struct Fraction {
  long hits = 0;
  long total = 0;
  double value = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // pulse-bootstrap percentile interval
};

struct DetectorIndicator {
  Fraction side, side_qm;        // (N+ + N-) / (N0 + N+ + N-)
  Fraction central, central_qm;  // N0 / N_all
  double z_side = 0.0;           // separation of the paired side fractions
  double z_central = 0.0;
  bool pass_side = false;     // side < side_qm at 3 sigma
  bool pass_central = false;  // central > central_qm at 3 sigma
  bool degenerate = false;    // both side fractions consistent with zero
  ExperimentReport run, run_qm;
};

// Detectors: dets[0] is the central detector, dets[1], dets[2] the side pair.
DetectorIndicator exp2_detectors(const BeamConfig& cfg,
                                 const std::vector<DetectorSpec>& dets);

struct FluctuationIndicator {
  std::vector<long> side_counts;  // per pulse, N+ + N-
  double mean = 0.0;
  double variance = 0.0;        // I^{-1} sum (N^i - mean)^2
  double poisson_bound = 0.0;   // mean side count: the stable null-scale bound
  double threshold = 0.0;       // bound scaled to the confidence quantile
  double confidence = 0.95;
  bool pass = false;  // variance > threshold
  ExperimentReport run;
};

FluctuationIndicator exp3_fluctuation(const BeamConfig& cfg,
                                      const std::vector<DetectorSpec>& dets);

struct CenterIndicator {
  std::vector<double> centers;  // per-pulse fitted centroids
  std::vector<double> r0_sq;    // per-pulse fitted squared radii (variance)
  double dispersion = 0.0;      // I^{-1} sum |x0^i - mean|^2
  double r0_sq_mean = 0.0;
  double indicator = 0.0;  // dispersion / r0_sq_mean
  double model_score = 0.0;  // pulse-mixture vs single-component fit gain
  bool pass = false;  // indicator >= 1
  ExperimentReport run;
};

CenterIndicator exp4_pulse_centers(const BeamConfig& cfg);

struct PulseCountIndicator {
  std::vector<double> n_plus, n_minus;  // per pulse (corrected counts for Exp.6)
  double nbar_plus = 0.0, nbar_minus = 0.0;
  double spread_plus = 0.0;   // sigma(N+) / sqrt(nbar+)
  double spread_minus = 0.0;
  double spread_threshold = 0.0;  // 1 + 3 / sqrt(I)
  double balance_lhs = 0.0;   // I^{-1} sum |N+^i nbar-/nbar - N-^i nbar+/nbar|
  double balance_rhs = 0.0;   // 2 sqrt(nbar), nbar = sqrt(nbar+ nbar-)
  bool pass_spread = false;   // max spread exceeds the threshold
  bool pass_balance = false;  // balance_lhs > balance_rhs
  bool pass = false;          // both
  ExperimentReport run;
};

// Exp.5 counts a symmetric detector pair directly; dets[0] / dets[1] are D+ / D-.
PulseCountIndicator exp5_pulse_counts(const BeamConfig& cfg,
                                      const std::vector<DetectorSpec>& dets);

// Exp.6 uses the two half-planes and normalizes each pulse's pair to the mean
// total before testing, removing pulse-intensity fluctuations.
PulseCountIndicator exp6_halfplane(const BeamConfig& cfg);

// Operating-point presets: electrons at two relaxation scales and the
// optical variant (photon_mode with the effective mass).
BeamConfig preset_electron_ns();   // tau0 ~ 1e-9 s
BeamConfig preset_electron_10ps(); // tau0 ~ 1e-11 s
BeamConfig preset_photon();        // tau0 ~ 1e-11 s, V = c

}  // namespace subqm
