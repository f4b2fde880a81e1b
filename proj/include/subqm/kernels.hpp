#pragma once

// Closed-form propagator kernels for one transverse degree of freedom.
// Phase-space points are ordered (p, x); two-point kernels act on
// (p1, x1, p2, x2) with the "1" block the input and "2" the output. The
// kernel exponent is (i/hbar) S(X1, X2) with S the quadratic two-point
// action; the three regimes differ only in the coefficient set used.

#include <Eigen/Dense>

#include "subqm/quadratics.hpp"

namespace subqm {

struct ModelParams {
  double hbar = 1.0;
  double m = 1.0;
  double a = 1.0;  // action-density constant of the fourth-order term

  double tau() const { return std::sqrt(a * m); }
  double beta() const { return 1.0 / tau(); }
};

enum class KernelRegime { exact, long_time, short_time };

// The four independent entries of the quadratic two-point action
//   S = a/2 (p1^2 + p2^2) + b p1 p2 + c/2 (x1^2 + x2^2) - c x1 x2
//       - d (x1 p1 + x1 p2) + d (x2 p1 + x2 p2)
// plus the stable combinations they are built from.
struct Coefficients {
  double a, b, c, d;
  double D;            // z - 2 tanh(z/2), z = beta T
  double omega_long;   // 1/(z - 2)
  double omega_short;  // 12/z^3
  double z;
};

// z - 2 tanh(z/2) with a series branch below z = 0.05 (the direct form loses
// ~8 digits already at z = 1e-3).
double stable_D(double z);

Coefficients coefficients_abcd(double T, const ModelParams& params,
                               KernelRegime regime = KernelRegime::exact);

struct PropagatorKernel {
  Eigen::Matrix2d Qin, Qout, Qtr;
  double log_norm_abs;  // log |N_T| for this single degree of freedom
  KernelRegime regime;
  double T;
  ModelParams params;

  // The kernel as a 4-variable Gaussian form over (p1, x1, p2, x2).
  QuadForm joint() const;
};

PropagatorKernel make_kernel(double T, const ModelParams& params,
                             KernelRegime regime = KernelRegime::exact);

// Exact two-point action between phase-space endpoints: the extremal value of
// the time integral of (m/2)(xdot^2 + a m xddot^2) over trajectories with
// position and momentum fixed at both ends.
double classical_action(double p1, double x1, double p2, double x2, double T,
                        const ModelParams& params);

// Leading short-time form: fluctuation terms plus the uniform-motion kinetic
// correction (T/6m)(p1^2 + p1 p2 + p2^2). Throws RegimeViolation for
// beta T >= 0.3.
double short_time_action(double p1, double x1, double p2, double x2, double T,
                         const ModelParams& params);

// |N_T| for one degree of freedom, and its log (overflow-safe for large
// beta T).
double normalization(double T, const ModelParams& params);
double log_normalization(double T, const ModelParams& params);

// Free Schroedinger kernel over (x1, x2).
QuadForm qm_free_kernel(double T, double hbar, double m);

// Kernel with the output momentum integrated out, over (p1, x1, x2):
// exponent (i/2hbar) beta m omega_tilde (x2 - x1 - T p1/m)^2 with
// omega_tilde = omega_short / 4.
QuadForm reduced_kernel(double T, const ModelParams& params);

// Momentum-relaxation kernel over (q_in, q_out) with the unitary prefactor
// magnitude (2 pi hbar c0 beta m sinh(beta t))^{-1/2}.
QuadForm relaxation_kernel(double t, const ModelParams& params, double c0 = 1.0);

// L2 norm of the derivative of a 1-variable normalizable form.
double gradient_l2_norm(const QuadForm& f);

struct DecayPoint {
  double norm;       // ||psi_t||
  double grad_norm;  // ||D psi_t|| after stripping the outgoing chirp
  QuadForm stripped;
};

// Apply the relaxation kernel to phi1 for time t, strip the outgoing phase
// exp{(i/hbar) coth(beta t)/(2 c0 beta m) q^2}, and report norm and
// derivative norm. t = 0 returns phi1 itself.
DecayPoint relaxation_decay(const QuadForm& phi1, double t, const ModelParams& params,
                            double c0 = 1.0);

}  // namespace subqm
