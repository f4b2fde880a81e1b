#pragma once

// Exact calculus for complex Gaussian forms
//   f(X) = exp(logpref) * exp{ (i/hbar) ( (1/2) X^T M X + B^T X + c ) }
// with M complex symmetric. All propagation, slit, and marginalization
// algebra in this library reduces to closed operations on these forms.
// Only |prefactor| and prefactor ratios are certified; phases of the
// accumulated prefactor follow principal branches and are informational.

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "subqm/errors.hpp"

namespace subqm {

using cd = std::complex<double>;

struct QuadForm {
  Eigen::MatrixXcd M;
  Eigen::VectorXcd B;
  cd c{0.0, 0.0};
  cd logpref{0.0, 0.0};
  double hbar{1.0};

  int dim() const { return static_cast<int>(M.rows()); }

  // Exponent (i/hbar)((1/2) X^T M X + B^T X + c), without the prefactor.
  cd exponent(const Eigen::VectorXd& X) const;
  // Full value including the prefactor.
  cd value(const Eigen::VectorXd& X) const;
};

// Zero-exponent form of the given dimension.
QuadForm quadform_zero(int dim, double hbar);

// A 1-d amplitude Gaussian  norm * exp{-(x-x0)^2/(2 width^2)} exp{(i/hbar) k x}
// expressed as a QuadForm in one variable. width is the amplitude-Gaussian
// parameter: the |f|^2 density has variance width^2/2.
QuadForm gaussian_1d(double x0, double width, double k, double hbar, double norm = 1.0);

// Im(M) >= 0 check (positive semidefinite within tol * scale).
bool is_integrable(const QuadForm& f, double tol = 1e-10);
// Im(M) > 0 check: finite L2 norm.
bool is_normalizable(const QuadForm& f, double tol = 1e-10);

// Pointwise product: exponents add, prefactors multiply.
QuadForm multiply(const QuadForm& a, const QuadForm& b);

// Integrate out the variables listed in idx (0-based, distinct):
//   g(X_C) = int f(X) dX_S.
// Non-damped directions (Im block singular) get the +i0 regularization
// Im(M_SS) += eps * I with eps scaled to the matrix. Throws NonIntegrable if
// the integrated block has a growing direction or is singular even after
// regularization.
QuadForm marginalize(const QuadForm& f, const std::vector<int>& idx);

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // covariance of the |f|^2 density: (hbar/2) Im(M)^{-1}
};

// Mean and covariance of the normalized |f|^2 density. Requires a
// normalizable form.
Moments moments(const QuadForm& f);

// sqrt( int |f|^2 dX ), prefactor included.
double l2_norm(const QuadForm& f);

// Inverse of a 2x2 complex matrix through the adjugate. Throws SingularMatrix
// when |det| <= 1e-12 * max|entry|^2.
Eigen::Matrix2cd adjugate_inverse_2x2(const Eigen::Matrix2cd& A);

// log of the Gaussian measure factor int exp{(i/hbar)(1/2) X^T M X} d^k X,
// branch fixed by continuation from M = i * (positive definite): computed as
// (2 pi hbar)^{k/2} prod_j lambda_j(-i M)^{-1/2} with per-eigenvalue principal
// logs. Requires Im(M) >= 0.
cd gauss_log_prefactor(const Eigen::MatrixXcd& Mblock, double hbar);

// One term a_k (X^T E_k + b_k)^2 of a rank-one sum over 2-d X.
struct RankOneTerm {
  cd a;
  Eigen::Vector2d E;
  cd b;
};

struct RankOneResult {
  cd exponent;        // value of the full closed-form exponent
  cd log_prefactor;   // log[(2 pi i hbar)^{d/2} Delta^{-1/2}], principal branch
  cd delta;           // det of the quadratic part (the normalization Delta)
};

// Closed form of
//   int exp{ (i/2hbar) sum_k a_k (X^T E_k + b_k)^2 + (i/hbar) a0 X^T B0 } d^2 X
// via the adjugate identity: the result exponent is
//   (i/2hbar) { -Delta^{-1} Y^T (sum_k a_k E_k^perp E_k^perp^T) Y + sum_k a_k b_k^2 }
// with Y = sum_k a_k b_k E_k + a0 B0 and perp (u, v) = (v, -u).
RankOneResult integrate_rank_one_2d(const std::vector<RankOneTerm>& terms, cd a0,
                                    const Eigen::Vector2d& B0, double hbar);

// 1-d counterpart of       int exp{ (i/2hbar) [ sum_k a_k (x + b_k)^2 + 2 b0 x ] } dx.
RankOneResult integrate_rank_one_1d(const std::vector<cd>& a, const std::vector<cd>& b,
                                    cd b0, double hbar);

}  // namespace subqm
