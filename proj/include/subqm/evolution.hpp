#pragma once

// Single degree-of-freedom state evolution: kernel application, slit
// multiplication, concentration diagnostics, and the two detection rules
// (diagonal-pairing and sum-then-square) used to turn phase-space amplitudes
// into screen densities.

#include <optional>
#include <vector>

#include "subqm/kernels.hpp"
#include "subqm/quadratics.hpp"

namespace subqm {

// State over the phase-space pair (p, x).
struct GaussianState {
  QuadForm f;
  double t = 0.0;
};

// Superposition of forms over common variables.
using SumState = std::vector<QuadForm>;

// Beam with fully relaxed momentum phase exp{(i/2 hbar beta m) p^2} and a
// transverse plane-wave factor exp{(i/hbar)(l p + k x)}.
GaussianState relaxed_beam(const ModelParams& params, double k = 0.0, double l = 0.0);

// Unit-amplitude beam: the input of the slit pipelines, whose momentum
// statistics are carried entirely by the kernel.
GaussianState uniform_beam(const ModelParams& params);

// Pure-envelope concentrated state |psi| = exp{-x^2/(2 dx2) - p^2/(2 dp2)}
// centered at (p0, x0), with no chirp.
GaussianState concentrated_state(double dx2, double dp2, double x0, double p0,
                                 const ModelParams& params);

GaussianState propagate(const GaussianState& s, double T, const ModelParams& params,
                        KernelRegime regime = KernelRegime::exact);

// Same operation through the block closed form
//   M2 = Qout - Qtr^T (M1 + Qin)^{-1} Qtr,   B2 = -Qtr^T (M1 + Qin)^{-1} B1,
//   c2 = c1 - (1/2) B1^T (M1 + Qin)^{-1} B1,
// used as an independent route in tests.
QuadForm propagate_closed_form(const QuadForm& f, const PropagatorKernel& K);

// Multiply by the slit profile sqrt(2/pi) exp{-(x - center)^2 / (2 width^2)}
// (integral = 2 width). Throws SamplingDegenerate when
// width^2 beta m / hbar < 1e-10.
GaussianState apply_slit(const GaussianState& s, double center, double width,
                         const ModelParams& params);

struct ConcentrationReport {
  double dx2;    // squared amplitude width of the |psi| envelope along x
  double dp2;    // same along p (marginal widths: Schur complements)
  double kappa;  // (2/hbar) dx dp
  bool concentrated;
};

ConcentrationReport concentration(const GaussianState& s, const ModelParams& params);

// Squared screen width after flight time T from initial amplitude widths
// (amplitude-Gaussian convention).
double dispersion_subqm(double dx1_sq, double dp1_sq, double T, const ModelParams& params);
double dispersion_qm(double dx1_sq, double T, double hbar, double m);

struct GridWindow {
  double lo, hi;
  int n = 4097;  // odd: composite Simpson nodes
};

struct DensityProfile {
  std::vector<double> x, rho;  // rho integrates to 1 on the window
  double center = 0.0;
  double width_sq = 0.0;  // amplitude convention: 2 * variance of rho
  double mass_log = 0.0;  // log of the raw (unnormalized) window mass
};

// Detection by sum-then-square: rho(x) ∝ |sum_j int psi_j(p, x) dp|^2,
// renormalized on the window.
DensityProfile density_ip2(const SumState& comps, const GridWindow& win);
// Detection by diagonal pairing: rho(x) ∝ int |sum_j psi_j(p, x)|^2 dp with
// each component +i0-regularized before pairing.
DensityProfile density_ip1(const SumState& comps, const GridWindow& win);

// Window probabilities from the two rules (renormalized on win).
double probability_ip2(const SumState& comps, double a, double b, const GridWindow& win);
double probability_ip1(const SumState& comps, double a, double b, const GridWindow& win);

// Automatic window from the damped components (10 sigma); throws
// SamplingDegenerate when no component is damped in x.
GridWindow default_window(const SumState& comps, double nsigma = 10.0, int n = 4097);

// (max - min)/(max + min) over the central 80% of the profile.
double visibility(const DensityProfile& d);

// Positions of interior local maxima, parabolically refined.
std::vector<double> local_maxima(const DensityProfile& d);

}  // namespace subqm
