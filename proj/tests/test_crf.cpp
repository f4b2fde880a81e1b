#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "subqm/crf.hpp"
#include "subqm/errors.hpp"
#include "subqm/evolution.hpp"
#include "subqm/rng.hpp"

using namespace subqm;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd block_rot(int n) {
  const Eigen::MatrixXd R = build_rotation(n);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  A.topLeftCorner(n, n) = R;
  A.bottomRightCorner(n, n) = R;
  return A;
}

// Block-diagonal n-dof form from per-dof 2-variable factors, in the group
// (momenta first) index convention.
QuadForm assemble_dofs(const std::vector<QuadForm>& dofs, double hbar) {
  const int n = static_cast<int>(dofs.size());
  QuadForm g = quadform_zero(2 * n, hbar);
  for (int j = 0; j < n; ++j) {
    const QuadForm& s = dofs[j];
    g.M(j, j) += s.M(0, 0);
    g.M(j, n + j) += s.M(0, 1);
    g.M(n + j, j) += s.M(1, 0);
    g.M(n + j, n + j) += s.M(1, 1);
    g.B(j) += s.B(0);
    g.B(n + j) += s.B(1);
    g.c += s.c;
    g.logpref += s.logpref;
  }
  return g;
}

// The quadratic two-point action evaluated on scalar endpoints.
double pair_action(const Coefficients& k, double p1, double x1, double p2, double x2) {
  return 0.5 * k.a * (p1 * p1 + p2 * p2) + k.b * p1 * p2 +
         0.5 * k.c * (x1 * x1 + x2 * x2) - k.c * x1 * x2 - k.d * (x1 * p1 + x1 * p2) +
         k.d * (x2 * p1 + x2 * p2);
}

double kernel_scale(const PropagatorKernel& k) {
  return std::max({k.Qin.cwiseAbs().maxCoeff(), k.Qout.cwiseAbs().maxCoeff(),
                   k.Qtr.cwiseAbs().maxCoeff()});
}

QuadForm random_group_state(Rng& rng, int n, double hbar) {
  const int d = 2 * n;
  Eigen::MatrixXd S(d, d), L = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      S(i, j) = S(j, i) = rng.uniform(-1, 1);
      L(i, j) = (i == j) ? rng.uniform(0.5, 1.5) : rng.uniform(-0.4, 0.4);
    }
  }
  QuadForm f = quadform_zero(d, hbar);
  f.M = S.cast<cd>() + cd(0, 1) * (L * L.transpose()).cast<cd>();
  for (int i = 0; i < d; ++i) {
    f.B(i) = cd(rng.uniform(-1, 1), rng.uniform(-0.3, 0.3));
  }
  f.c = cd(rng.uniform(-1, 1), rng.uniform(0, 0.4));
  f.logpref = cd(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  return f;
}

}  // namespace

TEST_CASE("amplitude split: derived constants and regime flag") {
  Rng rng(71001);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform(1.0, 9.0));
    const double a0 = std::pow(10.0, rng.uniform(-4, 3));
    const double a1 = std::pow(10.0, rng.uniform(-4, 3));
    const double m = std::pow(10.0, rng.uniform(-1, 1));
    CrfParams par = make_crf_params(n, a0, a1, m);
    // a1 + n a2 collapses to a0 / (n + a0/a1)
    CHECK(par.a3() == doctest::Approx(a0 / (n + a0 / a1)).epsilon(1e-13));
    CHECK(par.a2() < 0.0);
    CHECK(par.a3() > 0.0);
    CHECK(par.a3() < a1);
    CHECK(par.regime_ok() == (std::sqrt(a0 * m) <= 0.1 * std::sqrt(a1 * m)));
  }

  CrfParams dec = make_crf_params(4, kInf, 2.5);
  CHECK(dec.a2() == 0.0);
  CHECK(dec.a3() == 2.5);
  CHECK_FALSE(dec.regime_ok());

  CHECK_THROWS_AS(make_crf_params(0, 1.0, 1.0), InvalidCount);
  CHECK_THROWS_AS(make_crf_params(2, -1.0, 1.0), ConfigInvalid);
  CHECK_THROWS_AS(make_crf_params(2, 1.0, 0.0), ConfigInvalid);
  CHECK_THROWS_AS(make_crf_params(2, 1.0, 1.0, -2.0), ConfigInvalid);
  CHECK_THROWS_AS(make_crf_params(2, 1.0, 1.0, 1.0, 0.0), ConfigInvalid);
}

TEST_CASE("rotation: orthogonal, zero-sum columns, mean column") {
  {
    const Eigen::MatrixXd R = build_rotation(2);
    const double r = 1.0 / std::sqrt(2.0);
    CHECK(R(0, 0) == doctest::Approx(r));
    CHECK(R(1, 0) == doctest::Approx(-r));
    CHECK(R(0, 1) == doctest::Approx(r));
    CHECK(R(1, 1) == doctest::Approx(r));
  }

  const int n = 5;
  const Eigen::MatrixXd R = build_rotation(n);
  CHECK((R.transpose() * R - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <
        1e-14);
  for (int j = 0; j < n - 1; ++j) {
    CHECK(std::abs(R.col(j).sum()) < 1e-14);
  }
  CHECK((R.col(n - 1).array() - 1.0 / std::sqrt(5.0)).abs().maxCoeff() < 1e-15);

  Rng rng(71002);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd u(n), v(n);
    for (int i = 0; i < n; ++i) {
      u(i) = rng.uniform(-2, 2);
      v(i) = rng.uniform(-2, 2);
    }
    const Eigen::VectorXd uy = R.transpose() * u, vy = R.transpose() * v;
    CHECK(uy.dot(vy) == doctest::Approx(u.dot(v)).epsilon(1e-12));
    CHECK(uy(n - 1) == doctest::Approx(u.sum() / std::sqrt(5.0)).epsilon(1e-12));
    // the first n-1 components carry exactly the deviations from the mean
    double rel = 0.0, dev = 0.0;
    for (int j = 0; j < n - 1; ++j) rel += uy(j) * vy(j);
    for (int i = 0; i < n; ++i) {
      dev += (u(i) - u.mean()) * (v(i) - v.mean());
    }
    CHECK(rel == doctest::Approx(dev).epsilon(1e-12));
  }

  CHECK_THROWS_AS(build_rotation(1), InvalidCount);
}

TEST_CASE("linear substitution composes pointwise; product states factor") {
  Rng rng(71003);
  const double hbar = 0.7;
  QuadForm f = random_group_state(rng, 2, hbar);
  Eigen::MatrixXd L(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) L(i, j) = rng.uniform(-1, 1);
  }
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd Y(4);
    for (int i = 0; i < 4; ++i) Y(i) = rng.uniform(-1, 1);
    const cd direct = f.value(L * Y);
    const cd subbed = substitute_linear(f, L).value(Y);
    CHECK(std::abs(direct - subbed) < 1e-12 * (1.0 + std::abs(direct)));
  }
  CHECK_THROWS_AS(substitute_linear(f, Eigen::MatrixXd::Identity(3, 3)), ConfigInvalid);

  ModelParams one{1.0, 1.0, 1.0};
  const QuadForm single = concentrated_state(0.02, 0.005, 0.3, -0.2, one).f;
  const QuadForm prod = product_state(single, 3);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd X(6);
    for (int i = 0; i < 6; ++i) X(i) = rng.uniform(-1, 1);
    cd expect(1.0, 0.0);
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd xj(2);
      xj << X(j), X(3 + j);
      expect *= single.value(xj);
    }
    CHECK(std::abs(prod.value(X) - expect) < 1e-12 * (1.0 + std::abs(expect)));
  }
  CHECK_THROWS_AS(product_state(prod, 2), ConfigInvalid);
  CHECK_THROWS_AS(product_state(single, 0), InvalidCount);
}

TEST_CASE("group action splits into deviation and mean parts") {
  CrfParams par = make_crf_params(3, 0.5, 2.0, 1.3);
  const double T = 0.7;
  const Coefficients krel = coefficients_abcd(T, par.relative_params());
  const Coefficients kmean = coefficients_abcd(T, par.mean_params());
  const int n = par.n;

  Rng rng(71004);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd X1(2 * n), X2(2 * n);
    for (int i = 0; i < 2 * n; ++i) {
      X1(i) = rng.uniform(-1.5, 1.5);
      X2(i) = rng.uniform(-1.5, 1.5);
    }
    const auto p1 = X1.head(n), x1 = X1.tail(n), p2 = X2.head(n), x2 = X2.tail(n);
    double oracle = n * pair_action(kmean, p1.mean(), x1.mean(), p2.mean(), x2.mean());
    for (int i = 0; i < n; ++i) {
      oracle += pair_action(krel, p1(i) - p1.mean(), x1(i) - x1.mean(),
                            p2(i) - p2.mean(), x2(i) - x2.mean());
    }
    const double got = crf_action(X1, X2, T, par);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-10));
  }

  // identical endpoints for every particle: pure mean motion
  Eigen::VectorXd X1(2 * n), X2(2 * n);
  X1 << 0.4, 0.4, 0.4, -0.2, -0.2, -0.2;
  X2 << -0.1, -0.1, -0.1, 0.7, 0.7, 0.7;
  const double same = crf_action(X1, X2, T, par);
  CHECK(same ==
        doctest::Approx(n * classical_action(0.4, -0.2, -0.1, 0.7, T, par.mean_params()))
            .epsilon(1e-12));

  // a single particle feels the reduced constant a0 a1 / (a0 + a1)
  CrfParams par1 = make_crf_params(1, 0.5, 2.0, 1.3);
  Eigen::VectorXd Y1(2), Y2(2);
  Y1 << 0.3, -0.6;
  Y2 << -0.2, 0.5;
  ModelParams reduced{par1.hbar, par1.m, 0.5 * 2.0 / (0.5 + 2.0)};
  CHECK(crf_action(Y1, Y2, T, par1) ==
        doctest::Approx(classical_action(0.3, -0.6, -0.2, 0.5, T, reduced))
            .epsilon(1e-12));

  CHECK_THROWS_AS(crf_action(X1, X2, 0.0, par), NonpositiveDuration);
  CHECK_THROWS_AS(crf_action(Y1, X2, T, par), ConfigInvalid);
}

TEST_CASE("group propagation factorizes over the split coordinates") {
  CrfParams par = make_crf_params(3, 0.8, 2.5, 1.1, 0.7);
  const double T = 0.6;
  const int n = par.n;
  const PropagatorKernel rel_k = make_kernel(T, par.relative_params());
  const PropagatorKernel mean_k = make_kernel(T, par.mean_params());
  const ModelParams rel = par.relative_params();

  // three distinguishable split-frame factors, two with a quadratic phase
  std::vector<QuadForm> dofs;
  dofs.push_back(concentrated_state(2e-3, 5e-4, 0.3, -0.2, rel).f);
  dofs.push_back(concentrated_state(1e-3, 2e-4, -0.1, 0.4, rel).f);
  dofs.push_back(concentrated_state(5e-3, 1e-3, 0.0, 0.1, rel).f);
  dofs[1].M(0, 0) += 0.3;
  dofs[1].M(0, 1) += 0.1;
  dofs[1].M(1, 0) += 0.1;
  dofs[2].M(1, 1) -= 0.2;
  dofs[2].c += cd(0.15, 0.02);

  const QuadForm gy = assemble_dofs(dofs, par.hbar);
  const Eigen::MatrixXd A = block_rot(n);
  const QuadForm f = substitute_linear(gy, A.transpose());

  const QuadForm out = crf_propagate(f, T, par);
  const QuadForm oy = substitute_linear(out, A);

  const double tol = 1e-12 * (1.0 + std::max(kernel_scale(rel_k), kernel_scale(mean_k)));
  cd csum(0.0, 0.0), lsum(0.0, 0.0);
  for (int j = 0; j < n; ++j) {
    const QuadForm ej = propagate_closed_form(dofs[j], j == n - 1 ? mean_k : rel_k);
    CHECK(std::abs(oy.M(j, j) - ej.M(0, 0)) < tol);
    CHECK(std::abs(oy.M(j, n + j) - ej.M(0, 1)) < tol);
    CHECK(std::abs(oy.M(n + j, n + j) - ej.M(1, 1)) < tol);
    CHECK(std::abs(oy.B(j) - ej.B(0)) < tol * (1.0 + std::abs(ej.B(0))));
    CHECK(std::abs(oy.B(n + j) - ej.B(1)) < tol * (1.0 + std::abs(ej.B(1))));
    csum += ej.c;
    lsum += ej.logpref;
  }
  CHECK(std::abs(oy.c - csum) < 1e-10 * (1.0 + std::abs(csum)));
  CHECK(std::abs(oy.logpref - lsum) < 1e-10 * (1.0 + std::abs(lsum)));

  // no cross couplings appear between distinct split coordinates
  double cross = 0.0;
  for (int r = 0; r < 2 * n; ++r) {
    for (int s = 0; s < 2 * n; ++s) {
      if (r % n != s % n) cross = std::max(cross, std::abs(oy.M(r, s)));
    }
  }
  CHECK(cross < tol);

  CHECK_THROWS_AS(crf_propagate(f, -1.0, par), NonpositiveDuration);
  CHECK_THROWS_AS(crf_propagate(dofs[0], T, par), ConfigInvalid);
}

TEST_CASE("group propagation agrees with a directly assembled group kernel") {
  CrfParams par = make_crf_params(2, 0.6, 1.8, 0.9, 1.0);
  const double T = 0.45;
  const int n = par.n;
  const PropagatorKernel rel_k = make_kernel(T, par.relative_params());
  const PropagatorKernel mean_k = make_kernel(T, par.mean_params());
  const Eigen::MatrixXd A = block_rot(n);

  // rotate the split-frame kernel blocks into particle coordinates and build
  // the two-point form there, in one piece
  auto embed = [&](const Eigen::Matrix2d& q_rel, const Eigen::Matrix2d& q_mean) {
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    const Eigen::Matrix2d* qs[2] = {&q_rel, &q_mean};
    for (int j = 0; j < n; ++j) {
      const Eigen::Matrix2d& Q = *qs[j];
      E(j, j) = Q(0, 0);
      E(j, n + j) = Q(0, 1);
      E(n + j, j) = Q(1, 0);
      E(n + j, n + j) = Q(1, 1);
    }
    return Eigen::MatrixXd(A * E * A.transpose());
  };
  const Eigen::MatrixXd Kin = embed(rel_k.Qin, mean_k.Qin);
  const Eigen::MatrixXd Kout = embed(rel_k.Qout, mean_k.Qout);
  const Eigen::MatrixXd Ktr = embed(rel_k.Qtr, mean_k.Qtr);

  Rng rng(71005);
  for (int trial = 0; trial < 20; ++trial) {
    const QuadForm f = random_group_state(rng, n, par.hbar);
    QuadForm joint = quadform_zero(4 * n, par.hbar);
    joint.M.topLeftCorner(2 * n, 2 * n) = f.M + Kin.cast<cd>();
    joint.M.topRightCorner(2 * n, 2 * n) = Ktr.cast<cd>();
    joint.M.bottomLeftCorner(2 * n, 2 * n) = Ktr.transpose().cast<cd>();
    joint.M.bottomRightCorner(2 * n, 2 * n) = Kout.cast<cd>();
    joint.B.head(2 * n) = f.B;
    joint.c = f.c;
    joint.logpref = f.logpref + rel_k.log_norm_abs + mean_k.log_norm_abs;
    std::vector<int> in_idx = {0, 1, 2, 3};
    const QuadForm expect = marginalize(joint, in_idx);

    const QuadForm got = crf_propagate(f, T, par);
    const double tol =
        1e-11 * (1.0 + std::max(kernel_scale(rel_k), kernel_scale(mean_k)));
    CHECK((got.M - expect.M).cwiseAbs().maxCoeff() < tol);
    CHECK((got.B - expect.B).cwiseAbs().maxCoeff() <
          tol * (1.0 + expect.B.cwiseAbs().maxCoeff()));
    CHECK(std::abs(got.c - expect.c) < 1e-10 * (1.0 + std::abs(expect.c)));
    CHECK(std::abs(got.logpref - expect.logpref) <
          1e-10 * (1.0 + std::abs(expect.logpref)));

    // both relaxation rates act unitarily at these moderate beta T
    CHECK(std::abs(l2_norm(got) / l2_norm(f) - 1.0) < 1e-8);
  }
}

TEST_CASE("single particle reduces to one degree of freedom at the slow rate") {
  CrfParams par = make_crf_params(1, 0.9, 1.4);
  ModelParams eff = par.mean_params();
  const double T = 0.8;
  GaussianState s = concentrated_state(0.01, 0.002, 0.1, -0.3, eff);
  const QuadForm got = crf_propagate(s.f, T, par);
  const QuadForm expect = propagate(s, T, eff).f;
  CHECK((got.M - expect.M).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((got.B - expect.B).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(got.logpref - expect.logpref) < 1e-12);
}

TEST_CASE("group behavior: deviations stay sharp while the mean relaxes") {
  // beta1 T = 0.01, beta3 T = 20 with T = 1: the deviation sector barely
  // disperses while the mean sector reaches the momentum-relaxed form.
  const int n = 3;
  const double a1 = 1e4, a3 = 2.5e-3;
  const double a0 = a3 * n / (1.0 - a3 / a1);
  CrfParams par = make_crf_params(n, a0, a1);
  CHECK(par.beta1() == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(par.beta3() == doctest::Approx(20.0).epsilon(1e-10));
  CHECK(par.regime_ok());

  ModelParams one = par.relative_params();
  const double dx2 = 1e-3, dp2 = 1e-4, T = 1.0;
  std::vector<QuadForm> dofs(n - 1, concentrated_state(dx2, dp2, 0.0, 0.0, one).f);
  dofs.push_back(concentrated_state(1.0, 1.0, 0.0, 0.0, one).f);
  const Eigen::MatrixXd A = block_rot(n);
  const QuadForm f = substitute_linear(assemble_dofs(dofs, par.hbar), A.transpose());

  const QuadForm out = crf_propagate(f, T, par);
  const QuadForm oy = substitute_linear(out, A);

  // split-frame output stays block diagonal
  double cross = 0.0;
  for (int r = 0; r < 2 * n; ++r) {
    for (int s = 0; s < 2 * n; ++s) {
      if (r % n != s % n) cross = std::max(cross, std::abs(oy.M(r, s)));
    }
  }
  CHECK(cross < 1e-10 * (1.0 + oy.M.cwiseAbs().maxCoeff()));

  // each deviation coordinate evolved exactly as one degree of freedom at the
  // fast rate
  const QuadForm e1 = propagate(GaussianState{dofs[0], 0.0}, T, one).f;
  const double ktol = 1e-12 * (1.0 + kernel_scale(make_kernel(T, one)));
  for (int j = 0; j < n - 1; ++j) {
    CHECK(std::abs(oy.M(j, j) - e1.M(0, 0)) < ktol);
    CHECK(std::abs(oy.M(j, n + j) - e1.M(0, 1)) < ktol);
    CHECK(std::abs(oy.M(n + j, n + j) - e1.M(1, 1)) < ktol);
  }

  // deviation-sector position width: free-motion dispersion plus a small
  // heating correction, well under ten percent here
  Eigen::Matrix2d W;
  W << oy.M(0, 0).imag(), oy.M(0, n).imag(), oy.M(n, 0).imag(), oy.M(n, n).imag();
  const double dx2_out = par.hbar / (W(1, 1) - W(0, 1) * W(0, 1) / W(0, 0));
  const double v_free = dx2 + dp2 * T * T / (par.m * par.m);
  CHECK(dx2_out >= v_free);
  CHECK(dx2_out < 1.1 * v_free);

  // mean-sector momentum coefficient sits on the relaxed value 1/(beta3 m),
  // with the slow algebraic tail still visible at beta3 T = 20
  const cd mqq = oy.M(n - 1, n - 1);
  CHECK(std::abs(mqq * par.beta3() * par.m - 1.0) < 0.08);
}

TEST_CASE("a shared force builds interparticle correlation; an infinitely weak one none") {
  const double a1 = 1e4, a3 = 0.25;
  CrfParams par = make_crf_params(2, a3 * 2 / (1.0 - a3 / a1), a1);
  CHECK(par.regime_ok());
  ModelParams one = par.relative_params();
  const QuadForm single = concentrated_state(1e-3, 1e-4, 0.0, 0.0, one).f;
  const QuadForm fp = product_state(single, 2);

  const QuadForm out = crf_propagate(fp, 1.0, par);
  CHECK(std::abs(l2_norm(out) / l2_norm(fp) - 1.0) < 1e-6);
  const Moments mo = moments(out);
  const double xcorr = mo.cov(2, 3) / std::sqrt(mo.cov(2, 2) * mo.cov(3, 3));
  const double pcorr = mo.cov(0, 1) / std::sqrt(mo.cov(0, 0) * mo.cov(1, 1));
  CHECK(xcorr > 0.99);
  CHECK(pcorr > 0.99);
  CHECK(std::abs(out.M(0, 1)) > 1e-3);

  CrfParams dec = par;
  dec.a0 = kInf;
  const QuadForm oi = crf_propagate(fp, 1.0, dec);
  const Moments mi = moments(oi);
  CHECK(std::abs(mi.cov(2, 3)) < 1e-12 * std::abs(mi.cov(2, 2)));
  CHECK(std::abs(oi.M(0, 1)) < 1e-12);
  CHECK(std::abs(oi.M(2, 3)) < 1e-12);

  // with the common force off every particle evolves on its own
  const QuadForm es = propagate_closed_form(single, make_kernel(1.0, one));
  const QuadForm expect = product_state(es, 2);
  const double tol = 1e-11 * (1.0 + kernel_scale(make_kernel(1.0, one)));
  CHECK((oi.M - expect.M).cwiseAbs().maxCoeff() < tol);
  CHECK((oi.B - expect.B).cwiseAbs().maxCoeff() < tol);
  CHECK(std::abs(oi.logpref - expect.logpref) < 1e-10 * (1.0 + std::abs(expect.logpref)));
}

TEST_CASE("correlated check reads the deviation-sector widths") {
  ModelParams one{1.0, 1.0, 1.0};

  {
    // hand-built two-particle state: deviation factor with width 1e-2 x 5e-3
    std::vector<QuadForm> dofs;
    dofs.push_back(concentrated_state(1e-4, 2.5e-5, 0.0, 0.0, one).f);
    dofs.push_back(concentrated_state(0.04, 0.09, 0.0, 0.0, one).f);
    CrfParams par = make_crf_params(2, 1e-4, 1.0);
    const QuadForm f =
        substitute_linear(assemble_dofs(dofs, 1.0), block_rot(2).transpose());

    CorrelatedReport rep = correlated_check(f, 1e-2 * (1 + 1e-6), 5e-3 * (1 + 1e-6), par);
    CHECK(rep.dx_rel == doctest::Approx(1e-2).epsilon(1e-10));
    CHECK(rep.dp_rel == doctest::Approx(5e-3).epsilon(1e-10));
    CHECK(rep.kappa_rel == doctest::Approx(1e-4).epsilon(1e-5));
    CHECK(rep.within_envelope);
    CHECK(rep.correlated);

    // a tighter claim than the state supports is rejected
    CorrelatedReport tight = correlated_check(f, 0.99e-2, 5e-3 * (1 + 1e-6), par);
    CHECK_FALSE(tight.within_envelope);
    CHECK_FALSE(tight.correlated);

    // a cell claim at or above the quantum bound never counts as correlated
    CorrelatedReport wide = correlated_check(f, 30.0, 0.3, par);
    CHECK(wide.within_envelope);
    CHECK(wide.kappa_rel >= 1.0);
    CHECK_FALSE(wide.correlated);
  }

  {
    // three particles: the reported widths are the worst deviation directions
    std::vector<QuadForm> dofs;
    dofs.push_back(concentrated_state(1e-4, 2.5e-5, 0.0, 0.0, one).f);
    dofs.push_back(concentrated_state(4e-4, 1e-5, 0.0, 0.0, one).f);
    dofs.push_back(concentrated_state(0.01, 0.01, 0.0, 0.0, one).f);
    CrfParams par = make_crf_params(3, 1e-4, 1.0);
    const QuadForm f =
        substitute_linear(assemble_dofs(dofs, 1.0), block_rot(3).transpose());
    CorrelatedReport rep = correlated_check(f, 0.05, 0.05, par);
    CHECK(rep.dx_rel == doctest::Approx(2e-2).epsilon(1e-10));
    CHECK(rep.dp_rel == doctest::Approx(5e-3).epsilon(1e-10));
  }

  {
    // a relaxed product has unbounded marginals in every direction
    ModelParams beam{1.0, 1.0, 1e4};
    CrfParams par = make_crf_params(2, 1.0, 1e4);
    const QuadForm f = product_state(relaxed_beam(beam).f, 2);
    CorrelatedReport rep = correlated_check(f, 1.0, 1.0, par);
    CHECK(std::isinf(rep.dp_rel));
    CHECK_FALSE(rep.within_envelope);
    CHECK_FALSE(rep.correlated);
  }

  {
    // growing amplitude in some direction is rejected outright
    CrfParams par = make_crf_params(2, 1.0, 1.0);
    QuadForm f = product_state(concentrated_state(0.01, 0.01, 0.0, 0.0, one).f, 2);
    f.M(0, 0) = cd(0.0, -0.1);
    CHECK_THROWS_AS(correlated_check(f, 1.0, 1.0, par), NonNormalizable);
  }

  {
    CrfParams par1 = make_crf_params(1, 1.0, 1.0);
    CrfParams par2 = make_crf_params(2, 1.0, 1.0);
    const QuadForm f = product_state(concentrated_state(0.01, 0.01, 0.0, 0.0, one).f, 2);
    CHECK_THROWS_AS(
        correlated_check(concentrated_state(0.01, 0.01, 0.0, 0.0, one).f, 1.0, 1.0, par1),
        InvalidCount);
    CHECK_THROWS_AS(correlated_check(f, 0.0, 1.0, par2), ConfigInvalid);
    CHECK_THROWS_AS(
        correlated_check(concentrated_state(0.01, 0.01, 0.0, 0.0, one).f, 1.0, 1.0, par2),
        ConfigInvalid);
  }
}

TEST_CASE("a slit-prepared group passes the correlated check inside its envelope") {
  const double a1 = 1e4;
  ModelParams one{1.0, 1.0, a1};  // beta = 0.01
  const double T = 5.0;           // beta T = 0.05
  const double z = one.beta() * T;
  const double delta = std::sqrt(0.25 * z * z * T * one.hbar / one.m);

  GaussianState s = uniform_beam(one);
  s = apply_slit(s, 0.0, delta, one);
  s = propagate(s, T, one, KernelRegime::short_time);
  s = apply_slit(s, 0.0, delta, one);
  const ConcentrationReport single = concentration(s, one);
  CHECK(single.concentrated);

  const double a3 = 2.5e-3;
  CrfParams par = make_crf_params(3, a3 * 3 / (1.0 - a3 / a1), a1);
  CHECK(par.regime_ok());
  const QuadForm fp = product_state(s.f, 3);
  const double dx = std::sqrt(single.dx2) * (1 + 1e-6);
  const double dp = std::sqrt(single.dp2) * (1 + 1e-6);
  CorrelatedReport rep = correlated_check(fp, dx, dp, par);
  CHECK(rep.within_envelope);
  CHECK(rep.correlated);
  CHECK(rep.kappa_rel == doctest::Approx(single.kappa).epsilon(1e-4));
  CHECK(rep.kappa_rel < 0.02);
}
