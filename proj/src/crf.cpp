#include "subqm/crf.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "subqm/errors.hpp"
#include "subqm/evolution.hpp"

namespace subqm {

namespace {

void validate_group_form(const QuadForm& f, const CrfParams& par) {
  if (f.dim() != 2 * par.n) {
    throw ConfigInvalid("group form: dimension must be 2n in (p_1..p_n, x_1..x_n) order");
  }
}

Eigen::MatrixXd block_rotation(const Eigen::MatrixXd& R) {
  const int n = static_cast<int>(R.rows());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  A.topLeftCorner(n, n) = R;
  A.bottomRightCorner(n, n) = R;
  return A;
}

// Diagonal entry k of W^{-1} through the eigendecomposition, with undamped
// directions reported as an infinite width and growing ones rejected.
double inverse_diagonal(const Eigen::MatrixXd& W, int k) {
  const double scale = 1.0 + W.cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W);
  const auto& lam = es.eigenvalues();
  const auto& Q = es.eigenvectors();
  double acc = 0.0;
  for (int l = 0; l < W.rows(); ++l) {
    if (lam(l) < -1e-10 * scale) {
      throw NonNormalizable("correlated check: amplitude grows in some direction");
    }
    const double weight = Q(k, l) * Q(k, l);
    if (lam(l) <= 1e-12 * scale) {
      if (weight > 1e-12) return std::numeric_limits<double>::infinity();
      continue;
    }
    acc += weight / lam(l);
  }
  return acc;
}

}  // namespace

CrfParams make_crf_params(int n, double a0, double a1, double m, double hbar) {
  if (n < 1) throw InvalidCount("group: need at least one particle");
  if (!(a0 > 0.0) || !(a1 > 0.0)) {
    throw ConfigInvalid("group: amplitude constants must be positive");
  }
  if (!(m > 0.0) || !(hbar > 0.0)) throw ConfigInvalid("group: need m, hbar > 0");
  return {n, m, hbar, a0, a1};
}

Eigen::MatrixXd build_rotation(int n) {
  if (n < 2) throw InvalidCount("rotation: need at least two particles");
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n - 1; ++j) {
    const int k = j + 1;
    const double s = 1.0 / std::sqrt(static_cast<double>(k) * (k + 1));
    for (int i = 0; i < k; ++i) R(i, j) = s;
    R(k, j) = -k * s;
  }
  R.col(n - 1).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
  return R;
}

QuadForm substitute_linear(const QuadForm& f, const Eigen::MatrixXd& L) {
  if (L.rows() != f.dim() || L.cols() != f.dim()) {
    throw ConfigInvalid("substitution: matrix must match the form dimension");
  }
  QuadForm g = f;
  g.M = L.transpose() * f.M * L;
  g.M = 0.5 * (g.M + g.M.transpose()).eval();
  g.B = L.transpose() * f.B;
  return g;
}

QuadForm product_state(const QuadForm& single, int n) {
  if (single.dim() != 2) throw ConfigInvalid("product state: single-particle form must be 2-d");
  if (n < 1) throw InvalidCount("product state: need at least one factor");
  QuadForm f = quadform_zero(2 * n, single.hbar);
  for (int j = 0; j < n; ++j) {
    const int ip = j, ix = n + j;
    f.M(ip, ip) += single.M(0, 0);
    f.M(ix, ix) += single.M(1, 1);
    f.M(ip, ix) += single.M(0, 1);
    f.M(ix, ip) += single.M(1, 0);
    f.B(ip) += single.B(0);
    f.B(ix) += single.B(1);
  }
  f.c = static_cast<double>(n) * single.c;
  f.logpref = static_cast<double>(n) * single.logpref;
  return f;
}

double crf_action(const Eigen::VectorXd& X1, const Eigen::VectorXd& X2, double T,
                  const CrfParams& par) {
  if (!(T > 0.0)) throw NonpositiveDuration("group action: need T > 0");
  const int n = par.n;
  if (X1.size() != 2 * n || X2.size() != 2 * n) {
    throw ConfigInvalid("group action: endpoints must have 2n entries");
  }
  if (n == 1) {
    return classical_action(X1(0), X1(1), X2(0), X2(1), T, par.mean_params());
  }
  const Eigen::MatrixXd R = build_rotation(n);
  const Eigen::VectorXd q1 = R.transpose() * X1.head(n), y1 = R.transpose() * X1.tail(n);
  const Eigen::VectorXd q2 = R.transpose() * X2.head(n), y2 = R.transpose() * X2.tail(n);
  double S = classical_action(q1(n - 1), y1(n - 1), q2(n - 1), y2(n - 1), T,
                              par.mean_params());
  const ModelParams rel = par.relative_params();
  for (int j = 0; j < n - 1; ++j) {
    S += classical_action(q1(j), y1(j), q2(j), y2(j), T, rel);
  }
  return S;
}

QuadForm crf_propagate(const QuadForm& f, double T, const CrfParams& par) {
  validate_group_form(f, par);
  if (!(T > 0.0)) throw NonpositiveDuration("group propagation: need T > 0");
  const int n = par.n;
  const PropagatorKernel mean_k = make_kernel(T, par.mean_params());
  if (n == 1) {
    return propagate_closed_form(f, mean_k);
  }
  const Eigen::MatrixXd A = block_rotation(build_rotation(n));
  const QuadForm g = substitute_linear(f, A);
  const PropagatorKernel rel_k = make_kernel(T, par.relative_params());

  // Joint form over (q, y, q', y'); each split coordinate couples to its
  // primed image through its own sector kernel.
  QuadForm joint = quadform_zero(4 * n, f.hbar);
  joint.M.topLeftCorner(2 * n, 2 * n) = g.M;
  joint.B.head(2 * n) = g.B;
  joint.c = g.c;
  joint.logpref = g.logpref;
  for (int j = 0; j < n; ++j) {
    const QuadForm kj = (j == n - 1 ? mean_k : rel_k).joint();
    const int map[4] = {j, n + j, 2 * n + j, 3 * n + j};
    for (int r = 0; r < 4; ++r) {
      for (int s = 0; s < 4; ++s) joint.M(map[r], map[s]) += kj.M(r, s);
    }
    joint.logpref += kj.logpref;
  }
  std::vector<int> in_idx(2 * n);
  for (int i = 0; i < 2 * n; ++i) in_idx[i] = i;
  return substitute_linear(marginalize(joint, in_idx), A.transpose());
}

CorrelatedReport correlated_check(const QuadForm& f, double dx, double dp,
                                  const CrfParams& par) {
  validate_group_form(f, par);
  if (par.n < 2) throw InvalidCount("correlated check: need a relative sector (n >= 2)");
  if (!(dx > 0.0) || !(dp > 0.0)) {
    throw ConfigInvalid("correlated check: envelope widths must be positive");
  }
  const int n = par.n;
  const QuadForm g = substitute_linear(f, block_rotation(build_rotation(n)));
  const Eigen::MatrixXd W = g.M.imag();
  CorrelatedReport rep;
  for (int j = 0; j < n - 1; ++j) {
    rep.dp_rel = std::max(rep.dp_rel, std::sqrt(f.hbar * inverse_diagonal(W, j)));
    rep.dx_rel = std::max(rep.dx_rel, std::sqrt(f.hbar * inverse_diagonal(W, n + j)));
  }
  rep.kappa_rel = 2.0 * dx * dp / f.hbar;
  rep.within_envelope =
      rep.dx_rel <= dx * (1.0 + 1e-9) && rep.dp_rel <= dp * (1.0 + 1e-9);
  rep.correlated = rep.within_envelope && rep.kappa_rel < 1.0;
  return rep;
}

}  // namespace subqm
