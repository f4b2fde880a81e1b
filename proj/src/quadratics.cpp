#include "subqm/quadratics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace subqm {

namespace {

constexpr double kPi = std::numbers::pi;

double entry_scale(const Eigen::MatrixXcd& M) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    for (Eigen::Index i = 0; i < M.rows(); ++i) s = std::max(s, std::abs(M(i, j)));
  return s;
}

// Smallest eigenvalue of the (symmetrized) imaginary part.
double min_im_eigenvalue(const Eigen::MatrixXcd& M) {
  Eigen::MatrixXd im = 0.5 * (M.imag() + M.imag().transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(im);
  if (es.info() != Eigen::Success) throw SingularForm("eigensolver failed on Im(M)");
  return es.eigenvalues().minCoeff();
}

}  // namespace

// Each eigenvalue of H = -i M has Re >= 0 when Im(M) >= 0, so the
// per-eigenvalue principal log never crosses a cut; the principal log of the
// determinant does not have that property.
cd gauss_log_prefactor(const Eigen::MatrixXcd& Mblock, double hbar) {
  const int k = static_cast<int>(Mblock.rows());
  Eigen::MatrixXcd H = cd(0.0, -1.0) * Mblock;
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(H, false);
  if (es.info() != Eigen::Success) throw SingularForm("gauss prefactor: eigensolver failed");
  cd acc = 0.5 * k * std::log(2.0 * kPi * hbar);
  for (int i = 0; i < k; ++i) {
    cd lam = es.eigenvalues()(i);
    // Round-off can push Re just below zero; nudge back onto the closed
    // right half-plane so the principal log stays on the correct sheet.
    if (lam.real() < 0.0 && lam.real() > -1e-12 * std::abs(lam)) lam = cd(0.0, lam.imag());
    acc -= 0.5 * std::log(lam);
  }
  return acc;
}

cd QuadForm::exponent(const Eigen::VectorXd& X) const {
  Eigen::VectorXcd Xc = X.cast<cd>();
  cd quad = 0.5 * (Xc.transpose() * M * Xc)(0, 0);
  cd lin = (B.transpose() * Xc)(0, 0);
  return cd(0.0, 1.0) / hbar * (quad + lin + c);
}

cd QuadForm::value(const Eigen::VectorXd& X) const { return std::exp(logpref + exponent(X)); }

QuadForm quadform_zero(int dim, double hbar) {
  QuadForm f;
  f.M = Eigen::MatrixXcd::Zero(dim, dim);
  f.B = Eigen::VectorXcd::Zero(dim);
  f.c = 0.0;
  f.logpref = 0.0;
  f.hbar = hbar;
  return f;
}

QuadForm gaussian_1d(double x0, double width, double k, double hbar, double norm) {
  if (!(width > 0.0)) throw SamplingDegenerate("gaussian_1d needs width > 0");
  QuadForm f = quadform_zero(1, hbar);
  const double w2 = width * width;
  f.M(0, 0) = cd(0.0, hbar / w2);
  f.B(0) = cd(k, -hbar * x0 / w2);
  f.c = cd(0.0, hbar * x0 * x0 / (2.0 * w2));
  f.logpref = std::log(cd(norm, 0.0));
  return f;
}

bool is_integrable(const QuadForm& f, double tol) {
  const double s = std::max(1.0, entry_scale(f.M));
  return min_im_eigenvalue(f.M) >= -tol * s;
}

bool is_normalizable(const QuadForm& f, double tol) {
  const double s = std::max(1.0, entry_scale(f.M));
  return min_im_eigenvalue(f.M) > tol * s * 1e-6;
}

QuadForm multiply(const QuadForm& a, const QuadForm& b) {
  if (a.dim() != b.dim()) throw SingularForm("multiply: dimension mismatch");
  if (a.hbar != b.hbar) throw SingularForm("multiply: hbar mismatch");
  QuadForm f;
  f.M = a.M + b.M;
  f.B = a.B + b.B;
  f.c = a.c + b.c;
  f.logpref = a.logpref + b.logpref;
  f.hbar = a.hbar;
  return f;
}

QuadForm marginalize(const QuadForm& f, const std::vector<int>& idx) {
  const int n = f.dim();
  const int k = static_cast<int>(idx.size());
  if (k == 0) return f;
  std::vector<char> mark(n, 0);
  for (int i : idx) {
    if (i < 0 || i >= n || mark[i]) throw SingularForm("marginalize: bad index set");
    mark[i] = 1;
  }
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (!mark[i]) keep.push_back(i);
  const int r = static_cast<int>(keep.size());

  Eigen::MatrixXcd Mss(k, k), Msc(k, r), Mcc(r, r);
  Eigen::VectorXcd Bs(k), Bc(r);
  for (int i = 0; i < k; ++i) {
    Bs(i) = f.B(idx[i]);
    for (int j = 0; j < k; ++j) Mss(i, j) = f.M(idx[i], idx[j]);
    for (int j = 0; j < r; ++j) Msc(i, j) = f.M(idx[i], keep[j]);
  }
  for (int i = 0; i < r; ++i) {
    Bc(i) = f.B(keep[i]);
    for (int j = 0; j < r; ++j) Mcc(i, j) = f.M(keep[i], keep[j]);
  }

  const double scale = std::max(1.0, entry_scale(Mss));
  {
    Eigen::MatrixXd im = 0.5 * (Mss.imag() + Mss.imag().transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(im);
    if (es.info() != Eigen::Success) throw SingularForm("marginalize: Im block eigensolver failed");
    if (es.eigenvalues().minCoeff() < -1e-10 * scale)
      throw NonIntegrable("marginalize: integrated block has a growing direction");
  }

  // Oscillatory (pure-phase) directions need no epsilon in the value: the
  // Schur complement is the +i0 limit exactly, and the prefactor branch is
  // fixed separately. Epsilon only rescues blocks that are singular as
  // complex matrices.
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Mss);
  cd det = lu.determinant();
  if (!(std::abs(det) > 1e-14 * std::pow(scale, k))) {
    const double eps = 1e-9 * (1.0 + scale);
    Mss += cd(0.0, eps) * Eigen::MatrixXcd::Identity(k, k);
    lu.compute(Mss);
    det = lu.determinant();
    if (!(std::abs(det) > 1e-14 * std::pow(scale, k)))
      throw NonIntegrable("marginalize: singular quadratic block");
  }

  Eigen::MatrixXcd MssInvMsc = lu.solve(Msc);
  Eigen::VectorXcd MssInvBs = lu.solve(Bs);

  QuadForm g;
  g.hbar = f.hbar;
  g.M = Mcc - Msc.transpose() * MssInvMsc;
  g.M = 0.5 * (g.M + g.M.transpose()).eval();
  g.B = Bc - Msc.transpose() * MssInvBs;
  g.c = f.c - 0.5 * (Bs.transpose() * MssInvBs)(0, 0);
  g.logpref = f.logpref + gauss_log_prefactor(Mss, f.hbar);
  return g;
}

Moments moments(const QuadForm& f) {
  const int n = f.dim();
  Eigen::MatrixXd G = 0.5 * (f.M.imag() + f.M.imag().transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw NonNormalizable("moments: |f|^2 is not a proper Gaussian density");
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  Eigen::VectorXd g = f.B.imag();
  Moments m;
  m.mean = -llt.solve(g);
  m.cov = 0.5 * f.hbar * llt.solve(Eigen::MatrixXd::Identity(n, n));
  m.cov = 0.5 * (m.cov + m.cov.transpose()).eval();
  return m;
}

double l2_norm(const QuadForm& f) {
  const int n = f.dim();
  Eigen::MatrixXd G = 0.5 * (f.M.imag() + f.M.imag().transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw NonNormalizable("l2_norm: |f|^2 is not integrable");
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  Eigen::VectorXd g = f.B.imag();
  const double quad = g.dot(llt.solve(g));
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(es.eigenvalues()(i));
  // int |f|^2 = e^{2 Re logpref} e^{-2 Im c / hbar} (pi hbar)^{n/2} det(G)^{-1/2}
  //             e^{ g^T G^{-1} g / hbar }
  const double log_int = 2.0 * f.logpref.real() - 2.0 * f.c.imag() / f.hbar +
                         0.5 * n * std::log(kPi * f.hbar) - 0.5 * logdet + quad / f.hbar;
  return std::exp(0.5 * log_int);
}

Eigen::Matrix2cd adjugate_inverse_2x2(const Eigen::Matrix2cd& A) {
  const cd det = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  double s = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s = std::max(s, std::abs(A(i, j)));
  if (!(std::abs(det) > 1e-12 * s * s)) throw SingularMatrix("adjugate_inverse_2x2: |det| too small");
  Eigen::Matrix2cd adj;
  adj << A(1, 1), -A(0, 1), -A(1, 0), A(0, 0);
  return adj / det;
}

RankOneResult integrate_rank_one_2d(const std::vector<RankOneTerm>& terms, cd a0,
                                    const Eigen::Vector2d& B0, double hbar) {
  Eigen::Matrix2cd M2 = Eigen::Matrix2cd::Zero();
  Eigen::Matrix2cd adj_sum = Eigen::Matrix2cd::Zero();
  Eigen::Vector2cd Y = a0 * B0.cast<cd>();
  cd sum_ab2 = 0.0;
  for (const auto& t : terms) {
    const Eigen::Vector2cd E = t.E.cast<cd>();
    Eigen::Vector2cd Ep;  // perp (u, v) = (v, -u)
    Ep << t.E(1), -t.E(0);
    M2 += t.a * E * E.transpose();
    adj_sum += t.a * Ep * Ep.transpose();
    Y += t.a * t.b * E;
    sum_ab2 += t.a * t.b * t.b;
  }
  double s = std::max(1.0, entry_scale(M2));
  const cd delta = M2(0, 0) * M2(1, 1) - M2(0, 1) * M2(1, 0);
  if (!(std::abs(delta) > 1e-14 * s * s))
    throw NonIntegrable("integrate_rank_one_2d: degenerate quadratic part");
  {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(
        Eigen::Matrix2d(0.5 * (M2.imag() + M2.imag().transpose())));
    if (es.eigenvalues().minCoeff() < -1e-10 * s)
      throw NonIntegrable("integrate_rank_one_2d: growing direction");
  }
  RankOneResult r;
  const cd ip = (Y.transpose() * adj_sum * Y)(0, 0);
  r.exponent = cd(0.0, 1.0) / (2.0 * hbar) * (-ip / delta + sum_ab2);
  r.delta = delta;
  r.log_prefactor = gauss_log_prefactor(M2, hbar);
  return r;
}

RankOneResult integrate_rank_one_1d(const std::vector<cd>& a, const std::vector<cd>& b,
                                    cd b0, double hbar) {
  if (a.size() != b.size()) throw SingularForm("integrate_rank_one_1d: length mismatch");
  cd sum_a = 0.0, sum_ab = 0.0, sum_ab2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    sum_a += a[i];
    sum_ab += a[i] * b[i];
    sum_ab2 += a[i] * b[i] * b[i];
  }
  if (!(std::abs(sum_a) > 1e-14 * (1.0 + std::abs(b0))))
    throw NonIntegrable("integrate_rank_one_1d: vanishing quadratic part");
  if (sum_a.imag() < -1e-10 * std::abs(sum_a))
    throw NonIntegrable("integrate_rank_one_1d: growing direction");
  const cd lin = sum_ab + b0;
  RankOneResult r;
  r.exponent = cd(0.0, 1.0) / (2.0 * hbar) * (-lin * lin / sum_a + sum_ab2);
  r.delta = sum_a;
  Eigen::MatrixXcd M1(1, 1);
  M1(0, 0) = sum_a;
  r.log_prefactor = gauss_log_prefactor(M1, hbar);
  return r;
}

}  // namespace subqm
