#pragma once

// Deterministic phase-space transport: amplitudes ride the classical
// Hamiltonian flow and pick up the phase exp{(i/hbar) S} with
// S = int (p H_p - H) dt along the trajectory. States live on a uniform
// rectangular (x, p) grid; evolution pulls each node back along the inverse
// flow with cubic interpolation.

#include <Eigen/Dense>
#include <functional>

#include "subqm/quadratics.hpp"

namespace subqm {

// H = p^2/2m + V(x) for one degree of freedom. Free and harmonic carry exact
// flows and actions; a custom potential is integrated by a time-reversible
// second-order kick-drift-kick scheme with step targeted at `substep`.
struct HamiltonianSpec {
  enum class Kind { free, harmonic, custom };
  Kind kind = Kind::free;
  double m = 1.0;
  double omega = 0.0;
  std::function<double(double)> V;
  std::function<double(double)> dV;
  double substep = 1.0 / 256.0;

  static HamiltonianSpec free_particle(double m = 1.0);
  static HamiltonianSpec harmonic(double m, double omega);
  static HamiltonianSpec custom(double m, std::function<double(double)> V,
                                std::function<double(double)> dV);

  double potential(double q) const;
  double gradient(double q) const;
};

struct PhasePoint {
  double q = 0.0;
  double p = 0.0;
};

struct FlowResult {
  PhasePoint z;
  double action = 0.0;    // int (p H_p - H) dt, signed with t2 - t1
  double jacobian = 1.0;  // det of the tangent map (Liouville: always 1)
};

PhasePoint hamilton_flow(PhasePoint z, double t1, double t2, const HamiltonianSpec& H);
FlowResult hamilton_flow_action(PhasePoint z, double t1, double t2,
                                const HamiltonianSpec& H);

// psi(i, j) = psi(x_lo + i hx, p_lo + j hp). Uniform spacing, immutable
// snapshot semantics: every operation returns a new state.
struct GridState {
  double x_lo = 0.0, p_lo = 0.0;
  double hx = 0.0, hp = 0.0;
  Eigen::MatrixXcd psi;  // nx rows (x), np cols (p)
  double t = 0.0;
  double hbar = 1.0;

  int nx() const { return static_cast<int>(psi.rows()); }
  int np() const { return static_cast<int>(psi.cols()); }
  double x(int i) const { return x_lo + i * hx; }
  double p(int j) const { return p_lo + j * hp; }
  double x_hi() const { return x_lo + (nx() - 1) * hx; }
  double p_hi() const { return p_lo + (np() - 1) * hp; }
};

inline constexpr int kGridDefaultNodes = 256;
inline constexpr double kGridDefaultSigmas = 8.0;

GridState make_grid_state(const std::function<cd(double, double)>& f, double x_lo,
                          double x_hi, double p_lo, double p_hi,
                          int nx = kGridDefaultNodes, int np = kGridDefaultNodes,
                          double t = 0.0, double hbar = 1.0);

// Gaussian blob exp{-(x-x0)^2/(2 sx^2) - (p-p0)^2/(2 sp^2) + i k x / hbar} on
// a window of +- kGridDefaultSigmas amplitude widths around the center.
GridState gaussian_blob(double x0, double p0, double sx, double sp, double k = 0.0,
                        int nx = kGridDefaultNodes, int np = kGridDefaultNodes,
                        double hbar = 1.0);

double grid_norm(const GridState& s);
// Phase-space area of {|psi|^2 > level * max |psi|^2}, node-counted.
double support_area(const GridState& s, double level);

// Pull-back transport. Nodes whose backward image leaves the grid read zero;
// the forward image of every support node must stay on the grid or
// SupportEscapedGrid is thrown. Data-parallel over grid rows (SUBQM_THREADS).
GridState detqm_evolve(const GridState& s, double t1, double t2,
                       const HamiltonianSpec& H);

// Generator fields, central differences in x and p:
//   transport_rhs = (-p^2/2m - i hbar (p/m) d_x + i hbar V_x d_p + V) psi
//   relaxed_rhs   = transport_rhs(free) - (hbar^2/2) m beta^2 d_p^2 psi
Eigen::MatrixXcd transport_rhs(const GridState& s, const HamiltonianSpec& H);
Eigen::MatrixXcd relaxed_rhs(const GridState& s, double m, double beta);

// i hbar psi_t - transport_rhs with psi_t from a centered small-step evolve
// (delta = 1e-2 hx m / p_max). detqm_residual is the grid-L2 norm of the
// field over the interior (two-node margin); it decays at second order in
// the spacing for states solving the transport equation.
Eigen::MatrixXcd residual_field(const GridState& s, const HamiltonianSpec& H);
double detqm_residual(const GridState& s, const HamiltonianSpec& H);

}  // namespace subqm
