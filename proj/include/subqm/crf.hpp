#pragma once

// Correlated random forces for a group of n equal-mass particles. An
// orthogonal rotation splits the group into n-1 relative coordinates, which
// relax at the fast single-particle rate, and one mean coordinate relaxing
// much more slowly. Group phase-space vectors and forms are ordered
// (p_1..p_n, x_1..x_n); the rotation acts on the p-block and the x-block
// alike.

#include <Eigen/Dense>

#include "subqm/kernels.hpp"
#include "subqm/quadratics.hpp"

namespace subqm {

struct CrfParams {
  int n = 2;
  double m = 1.0;
  double hbar = 1.0;
  double a0 = 1.0;  // common-force amplitude constant; a0 = inf decorrelates
  double a1 = 1.0;  // per-particle amplitude constant

  double a2() const { return -a1 * a1 / (a0 + n * a1); }
  double a3() const { return a1 + a2() * n; }
  double tau0() const { return std::sqrt(a0 * m); }
  double tau1() const { return std::sqrt(a1 * m); }
  double tau3() const { return std::sqrt(a3() * m); }
  double beta1() const { return 1.0 / tau1(); }
  double beta3() const { return 1.0 / tau3(); }
  // The split is physical only when the common force dominates.
  bool regime_ok() const { return tau0() <= 0.1 * tau1(); }

  ModelParams relative_params() const { return {hbar, m, a1}; }
  ModelParams mean_params() const { return {hbar, m, a3()}; }
};

CrfParams make_crf_params(int n, double a0, double a1, double m = 1.0,
                          double hbar = 1.0);

// Orthogonal n x n matrix whose first n-1 columns span the zero-sum
// directions and whose last column is n^{-1/2} (1,...,1)^T.
Eigen::MatrixXd build_rotation(int n);

// Substitution g(Y) = f(L Y); no Jacobian factor is applied (forms, not
// densities — the uses here have |det L| = 1).
QuadForm substitute_linear(const QuadForm& f, const Eigen::MatrixXd& L);

// Product of n copies of a single-particle (p, x) form.
QuadForm product_state(const QuadForm& single, int n);

// Two-point group action: sum of single-dof actions at beta1 over the
// relative coordinates plus one at beta3 over the mean coordinate.
double crf_action(const Eigen::VectorXd& X1, const Eigen::VectorXd& X2, double T,
                  const CrfParams& par);

// Rotate to the split frame, propagate each sector with its own rate, rotate
// back.
QuadForm crf_propagate(const QuadForm& f, double T, const CrfParams& par);

struct CorrelatedReport {
  double dx_rel = 0.0;  // largest relative-sector marginal widths
  double dp_rel = 0.0;
  double kappa_rel = 0.0;  // 2 dx dp / hbar for the claimed envelope
  bool within_envelope = false;
  bool correlated = false;
};

// Envelope test: do the relative-sector marginals fit inside the claimed
// widths, and is the claimed cell subquantum (kappa_rel < 1)?
CorrelatedReport correlated_check(const QuadForm& f, double dx, double dp,
                                  const CrfParams& par);

}  // namespace subqm
