#include "subqm/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "subqm/errors.hpp"

namespace subqm {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr cd kI{0.0, 1.0};

QuadForm conj_form(const QuadForm& f) {
  QuadForm g = f;
  g.M = -f.M.conjugate();
  g.B = -f.B.conjugate();
  g.c = -std::conj(f.c);
  g.logpref = std::conj(f.logpref);
  return g;
}

// One-variable reduction of a (p, x) form: coefficients of
// log psi(x) = logpref + (i/hbar)(M/2 x^2 + B x + c).
struct Reduced {
  cd M, B, c, logpref;
  double hbar;

  cd log_value(double x) const {
    return logpref + kI / hbar * (0.5 * M * x * x + B * x + c);
  }
};

Reduced reduce_x(const QuadForm& f) {
  QuadForm m = marginalize(f, {0});
  return {m.M(0, 0), m.B(0), m.c, m.logpref, m.hbar};
}

double entry_scale(const QuadForm& f) {
  double s = f.M.cwiseAbs().maxCoeff();
  return std::max(1.0, s);
}

// Components whose momentum phase carries no damping get a +i0 width before
// pairing, so that |psi|^2 stays a pure (finite) envelope and cross pairs
// with distinct momentum-linear coefficients are suppressed.
SumState regularize_components(const SumState& comps) {
  double scale = 1.0;
  for (const auto& f : comps) scale = std::max(scale, entry_scale(f));
  const double eps = 1e-9 * (1.0 + scale);
  SumState out = comps;
  for (auto& f : out) {
    if (f.M(0, 0).imag() <= 1e-12 * scale) f.M(0, 0) += kI * eps;
  }
  return out;
}

double simpson_mass(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  const double h = (x.back() - x.front()) / (n - 1);
  double odd = 0.0, even = 0.0;
  for (int i = 1; i < n - 1; i += 2) odd += y[i];
  for (int i = 2; i < n - 1; i += 2) even += y[i];
  return h / 3.0 * (y.front() + y.back() + 4.0 * odd + 2.0 * even);
}

double adaptive_step(const std::function<double(double)>& f, double a, double b, double fa,
                     double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double adaptive_integrate(const std::function<double(double)>& f, double a, double b,
                          double tol) {
  const int seeds = 16;
  double total = 0.0;
  for (int i = 0; i < seeds; ++i) {
    const double lo = a + (b - a) * i / seeds;
    const double hi = a + (b - a) * (i + 1) / seeds;
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo), fmid = f(mid), fhi = f(hi);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    total += adaptive_step(f, lo, hi, flo, fmid, fhi, whole, tol / seeds, 40);
  }
  return total;
}

struct PairField {
  std::vector<Reduced> diag;
  std::vector<Reduced> cross;  // ordered pairs j < k
  double ref = 0.0;

  double rho_raw(double x) const {
    cd acc = 0.0;
    for (const auto& r : diag) acc += std::exp(r.log_value(x) - ref);
    double rho = acc.real();
    for (const auto& r : cross) rho += 2.0 * std::exp(r.log_value(x) - ref).real();
    return rho;
  }
};

PairField pair_field(const SumState& comps) {
  const SumState reg = regularize_components(comps);
  PairField pf;
  for (std::size_t j = 0; j < reg.size(); ++j) {
    pf.diag.push_back(reduce_x(multiply(reg[j], conj_form(reg[j]))));
    for (std::size_t k = j + 1; k < reg.size(); ++k) {
      pf.cross.push_back(reduce_x(multiply(reg[j], conj_form(reg[k]))));
    }
  }
  return pf;
}

struct SumField {
  std::vector<Reduced> comps;
  double ref = 0.0;

  double rho_raw(double x) const {
    cd acc = 0.0;
    for (const auto& r : comps) acc += std::exp(r.log_value(x) - ref);
    return std::norm(acc);
  }
};

SumField sum_field(const SumState& comps) {
  SumField sf;
  for (const auto& f : comps) sf.comps.push_back(reduce_x(f));
  return sf;
}

// Common reference exponent so that grid evaluation stays in range.
template <typename Field>
void set_reference(Field& field, const std::vector<Reduced>& parts, double lo, double hi) {
  double ref = -1e300;
  for (const auto& r : parts) {
    for (double x : {lo, 0.5 * (lo + hi), hi}) {
      ref = std::max(ref, r.log_value(x).real());
    }
  }
  field.ref = ref;
}

template <typename Field>
DensityProfile profile_from(Field& field, const GridWindow& win) {
  if (win.n < 5 || win.n % 2 == 0) throw ConfigInvalid("density window: need odd n >= 5");
  if (!(win.hi > win.lo)) throw ConfigInvalid("density window: need hi > lo");
  DensityProfile d;
  d.x.resize(win.n);
  d.rho.resize(win.n);
  const double h = (win.hi - win.lo) / (win.n - 1);
  for (int i = 0; i < win.n; ++i) {
    d.x[i] = win.lo + h * i;
    d.rho[i] = field.rho_raw(d.x[i]);
  }
  const double mass = simpson_mass(d.x, d.rho);
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw NonNormalizable("density: window mass is not positive");
  }
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < win.n; ++i) {
    d.rho[i] /= mass;
    mean += d.rho[i] * d.x[i];
  }
  mean *= h;
  for (int i = 0; i < win.n; ++i) var += d.rho[i] * (d.x[i] - mean) * (d.x[i] - mean);
  var *= h;
  d.center = mean;
  d.width_sq = 2.0 * var;
  d.mass_log = std::log(mass) + 2.0 * field.ref;
  return d;
}

template <typename Field>
double window_probability(Field& field, double a, double b, const GridWindow& win) {
  if (!(a < b) || a < win.lo || b > win.hi) {
    throw ConfigInvalid("window probability: need win.lo <= a < b <= win.hi");
  }
  auto f = [&field](double x) { return field.rho_raw(x); };
  double peak = 0.0;
  for (int i = 0; i <= 64; ++i) {
    peak = std::max(peak, f(win.lo + (win.hi - win.lo) * i / 64.0));
  }
  const double tol = 1e-13 * std::max(peak, 1e-300) * (win.hi - win.lo);
  const double total = adaptive_integrate(f, win.lo, win.hi, tol);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NonNormalizable("window probability: window mass is not positive");
  }
  return adaptive_integrate(f, a, b, tol) / total;
}

}  // namespace

GaussianState relaxed_beam(const ModelParams& params, double k, double l) {
  QuadForm f = quadform_zero(2, params.hbar);
  f.M(0, 0) = 1.0 / (params.beta() * params.m);
  f.B(0) = l;
  f.B(1) = k;
  return {f, 0.0};
}

GaussianState uniform_beam(const ModelParams& params) {
  return {quadform_zero(2, params.hbar), 0.0};
}

GaussianState concentrated_state(double dx2, double dp2, double x0, double p0,
                                 const ModelParams& params) {
  if (!(dx2 > 0.0) || !(dp2 > 0.0)) {
    throw ConfigInvalid("concentrated state: widths must be positive");
  }
  const double hbar = params.hbar;
  QuadForm f = quadform_zero(2, hbar);
  f.M(0, 0) = kI * hbar / dp2;
  f.M(1, 1) = kI * hbar / dx2;
  f.B(0) = -kI * hbar * p0 / dp2;
  f.B(1) = -kI * hbar * x0 / dx2;
  f.c = kI * hbar * 0.5 * (p0 * p0 / dp2 + x0 * x0 / dx2);
  return {f, 0.0};
}

GaussianState propagate(const GaussianState& s, double T, const ModelParams& params,
                        KernelRegime regime) {
  const PropagatorKernel K = make_kernel(T, params, regime);
  QuadForm joint = K.joint();
  joint.M.block<2, 2>(0, 0) += s.f.M;
  joint.B.segment<2>(0) += s.f.B;
  joint.c += s.f.c;
  joint.logpref += s.f.logpref;
  return {marginalize(joint, {0, 1}), s.t + T};
}

QuadForm propagate_closed_form(const QuadForm& f, const PropagatorKernel& K) {
  if (f.dim() != 2) throw ConfigInvalid("closed-form propagation: state must have 2 variables");
  const Eigen::Matrix2cd Qin = K.Qin.cast<cd>();
  const Eigen::Matrix2cd Qout = K.Qout.cast<cd>();
  const Eigen::Matrix2cd Qtr = K.Qtr.cast<cd>();
  const Eigen::Matrix2cd A = f.M + Qin;
  const Eigen::Matrix2cd Ainv = adjugate_inverse_2x2(A);
  const Eigen::Vector2cd B1 = f.B;
  QuadForm out = quadform_zero(2, f.hbar);
  out.M = Qout - Qtr.transpose() * Ainv * Qtr;
  out.M = 0.5 * (out.M + out.M.transpose()).eval();
  out.B = -Qtr.transpose() * (Ainv * B1);
  out.c = f.c - 0.5 * (B1.transpose() * (Ainv * B1))(0);
  out.logpref = f.logpref + cd(K.log_norm_abs) + gauss_log_prefactor(A, f.hbar);
  return out;
}

GaussianState apply_slit(const GaussianState& s, double center, double width,
                         const ModelParams& params) {
  if (!(width > 0.0)) throw ConfigInvalid("slit: width must be positive");
  const double hbar = s.f.hbar;
  if (width * width * params.beta() * params.m / hbar < 1e-10) {
    throw SamplingDegenerate("slit: width below the resolvable scale");
  }
  QuadForm slit = quadform_zero(2, hbar);
  slit.M(1, 1) = kI * hbar / (width * width);
  slit.B(1) = -kI * hbar * center / (width * width);
  slit.c = kI * hbar * center * center / (2.0 * width * width);
  slit.logpref = 0.5 * std::log(2.0 / kPi);
  return {multiply(s.f, slit), s.t};
}

ConcentrationReport concentration(const GaussianState& s, const ModelParams& params) {
  const double hbar = params.hbar;
  const Eigen::Matrix2d W = s.f.M.imag() / hbar;
  const double scale = std::max(1e-300, W.cwiseAbs().maxCoeff());
  const double tiny = 1e-14 * scale;
  auto marginal_width_sq = [&](int keep, int out) -> double {
    const double wkk = W(keep, keep), woo = W(out, out), wko = W(keep, out);
    const double schur = woo > tiny ? wkk - wko * wko / woo : wkk;
    if (schur <= tiny) return std::numeric_limits<double>::infinity();
    return 1.0 / schur;
  };
  ConcentrationReport r;
  r.dx2 = marginal_width_sq(1, 0);
  r.dp2 = marginal_width_sq(0, 1);
  r.kappa = 2.0 / hbar * std::sqrt(r.dx2) * std::sqrt(r.dp2);
  r.concentrated = r.kappa < 1.0;
  return r;
}

double dispersion_subqm(double dx1_sq, double dp1_sq, double T, const ModelParams& params) {
  const double r = T / params.m;
  const double z = params.beta() * T;
  const double z2 = z * z;
  return dx1_sq + dp1_sq * r * r +
         z2 * z2 / 9.0 * r * r * params.hbar * params.hbar / (dx1_sq + r * r * dp1_sq);
}

double dispersion_qm(double dx1_sq, double T, double hbar, double m) {
  return dx1_sq + hbar * hbar * T * T / (m * m * dx1_sq);
}

DensityProfile density_ip2(const SumState& comps, const GridWindow& win) {
  if (comps.empty()) throw ConfigInvalid("density: no components");
  SumField sf = sum_field(comps);
  set_reference(sf, sf.comps, win.lo, win.hi);
  return profile_from(sf, win);
}

DensityProfile density_ip1(const SumState& comps, const GridWindow& win) {
  if (comps.empty()) throw ConfigInvalid("density: no components");
  PairField pf = pair_field(comps);
  std::vector<Reduced> all = pf.diag;
  all.insert(all.end(), pf.cross.begin(), pf.cross.end());
  set_reference(pf, all, win.lo, win.hi);
  return profile_from(pf, win);
}

double probability_ip2(const SumState& comps, double a, double b, const GridWindow& win) {
  if (comps.empty()) throw ConfigInvalid("window probability: no components");
  SumField sf = sum_field(comps);
  set_reference(sf, sf.comps, win.lo, win.hi);
  return window_probability(sf, a, b, win);
}

double probability_ip1(const SumState& comps, double a, double b, const GridWindow& win) {
  if (comps.empty()) throw ConfigInvalid("window probability: no components");
  PairField pf = pair_field(comps);
  std::vector<Reduced> all = pf.diag;
  all.insert(all.end(), pf.cross.begin(), pf.cross.end());
  set_reference(pf, all, win.lo, win.hi);
  return window_probability(pf, a, b, win);
}

GridWindow default_window(const SumState& comps, double nsigma, int n) {
  double lo = 1e300, hi = -1e300;
  for (const auto& f : comps) {
    const Reduced r = reduce_x(f);
    const double im = r.M.imag();
    if (im <= 1e-12 * std::abs(r.M)) continue;
    const double center = -r.B.imag() / im;
    const double w = std::sqrt(f.hbar / im);
    lo = std::min(lo, center - nsigma * w);
    hi = std::max(hi, center + nsigma * w);
  }
  if (!(hi > lo)) {
    throw SamplingDegenerate("window: no damped component to size the grid from");
  }
  if (n % 2 == 0) ++n;
  return {lo, hi, n};
}

double visibility(const DensityProfile& d) {
  const int n = static_cast<int>(d.rho.size());
  const int a = n / 10, b = n - n / 10;
  double mx = -1e300, mn = 1e300;
  for (int i = a; i < b; ++i) {
    mx = std::max(mx, d.rho[i]);
    mn = std::min(mn, d.rho[i]);
  }
  if (mx + mn <= 0.0) return 0.0;
  return (mx - mn) / (mx + mn);
}

std::vector<double> local_maxima(const DensityProfile& d) {
  std::vector<double> out;
  const int n = static_cast<int>(d.rho.size());
  double peak = 0.0;
  for (double v : d.rho) peak = std::max(peak, v);
  for (int i = 1; i + 1 < n; ++i) {
    if (d.rho[i] > d.rho[i - 1] && d.rho[i] > d.rho[i + 1] && d.rho[i] > 1e-6 * peak) {
      const double denom = d.rho[i - 1] - 2.0 * d.rho[i] + d.rho[i + 1];
      double xstar = d.x[i];
      if (denom < 0.0) {
        xstar += 0.5 * (d.x[i + 1] - d.x[i]) * (d.rho[i - 1] - d.rho[i + 1]) / denom;
      }
      out.push_back(xstar);
    }
  }
  return out;
}

}  // namespace subqm
