#include "subqm/kernels.hpp"

#include <cmath>
#include <numbers>

namespace subqm {

namespace {

constexpr double kPi = std::numbers::pi;

// exp(-z)-based forms: safe for arbitrarily large z > 0.
double tanh_half(double z) {
  const double em = std::exp(-z);
  return (1.0 - em) / (1.0 + em);
}
double coth(double z) {
  const double em2 = std::exp(-2.0 * z);
  return (1.0 + em2) / (1.0 - em2);
}
double csch(double z) {
  const double em = std::exp(-z);
  return 2.0 * em / (1.0 - em * em);
}
double log_sinh(double z) {
  // log(sinh z) without overflow.
  return z + std::log1p(-std::exp(-2.0 * z)) - std::log(2.0);
}

void require_duration(double T) {
  if (!(T > 0.0)) throw NonpositiveDuration("time step must be positive");
}

}  // namespace

double stable_D(double z) {
  if (z < 0.05) {
    const double z2 = z * z;
    // z - 2 tanh(z/2) = (z^3/12)(1 - z^2/10 + 17 z^4/1680 - 62 z^6/60480 + ...)
    return z * z2 / 12.0 *
           (1.0 - z2 / 10.0 + 17.0 * z2 * z2 / 1680.0 - 62.0 * z2 * z2 * z2 / 60480.0);
  }
  return z - 2.0 * tanh_half(z);
}

Coefficients coefficients_abcd(double T, const ModelParams& params, KernelRegime regime) {
  require_duration(T);
  const double beta = params.beta();
  const double bm = beta * params.m;
  const double z = beta * T;
  Coefficients k;
  k.z = z;
  k.D = stable_D(z);
  k.omega_long = 1.0 / (z - 2.0);
  k.omega_short = 12.0 / (z * z * z);
  switch (regime) {
    case KernelRegime::exact: {
      const double t = tanh_half(z);
      k.a = (coth(z) + t * t / k.D) / bm;
      k.b = (-csch(z) + t * t / k.D) / bm;
      k.c = bm / k.D;
      k.d = -t / k.D;
      break;
    }
    case KernelRegime::long_time: {
      if (z <= 2.0) throw RegimeViolation("long-time coefficients need beta T > 2");
      const double w = k.omega_long;
      k.a = (1.0 + w) / bm;
      k.b = w / bm;
      k.c = bm * w;
      k.d = -w;
      break;
    }
    case KernelRegime::short_time: {
      if (z >= 0.3) throw RegimeViolation("short-time coefficients need beta T < 0.3");
      k.a = 4.0 / (bm * z);
      k.b = 2.0 / (bm * z);
      k.c = 12.0 * bm / (z * z * z);
      k.d = -6.0 / (z * z);
      break;
    }
  }
  return k;
}

QuadForm PropagatorKernel::joint() const {
  QuadForm f = quadform_zero(4, params.hbar);
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  M.block<2, 2>(0, 0) = Qin;
  M.block<2, 2>(2, 2) = Qout;
  M.block<2, 2>(0, 2) = Qtr;
  M.block<2, 2>(2, 0) = Qtr.transpose();
  f.M = M.cast<cd>();
  f.logpref = cd(log_norm_abs, 0.0);
  return f;
}

PropagatorKernel make_kernel(double T, const ModelParams& params, KernelRegime regime) {
  const Coefficients k = coefficients_abcd(T, params, regime);
  PropagatorKernel ker;
  ker.T = T;
  ker.params = params;
  ker.regime = regime;
  ker.Qin << k.a, -k.d, -k.d, k.c;
  ker.Qout << k.a, k.d, k.d, k.c;
  ker.Qtr << k.b, k.d, -k.d, -k.c;
  const double det_qtr = k.d * k.d - k.b * k.c;
  if (std::abs(det_qtr) > 0.0)
    ker.log_norm_abs = 0.5 * std::log(std::abs(det_qtr)) - std::log(2.0 * kPi * params.hbar);
  else
    ker.log_norm_abs = log_normalization(T, params);
  return ker;
}

double classical_action(double p1, double x1, double p2, double x2, double T,
                        const ModelParams& params) {
  require_duration(T);
  const double beta = params.beta();
  const double m = params.m;
  const double bm = beta * m;
  const double z = beta * T;
  const double t = tanh_half(z);
  const double momentum_part =
      ((p1 * p1 + p2 * p2) * coth(z) - 2.0 * p1 * p2 * csch(z)) / (2.0 * bm);
  const double u = (x2 - x1) - (p1 + p2) * t / bm;
  // m u^2 / (2 T (1 - (2/z) tanh(z/2))) with the stable denominator D/z.
  const double position_part = m * u * u * z / (2.0 * T * stable_D(z));
  return momentum_part + position_part;
}

double short_time_action(double p1, double x1, double p2, double x2, double T,
                         const ModelParams& params) {
  require_duration(T);
  const double beta = params.beta();
  const double m = params.m;
  const double z = beta * T;
  if (z >= 0.3) throw RegimeViolation("short_time_action needs beta T < 0.3");
  const double bm = beta * m;
  const double fluct_p = (p2 - p1) * (p2 - p1) / (2.0 * bm * z);
  const double u = (x2 - x1) - (p1 + p2) * T / (2.0 * m);
  const double fluct_x = 0.5 * bm * (12.0 / (z * z * z)) * u * u;
  const double kinetic = T / (6.0 * m) * (p1 * p1 + p1 * p2 + p2 * p2);
  return fluct_p + fluct_x + kinetic;
}

double log_normalization(double T, const ModelParams& params) {
  require_duration(T);
  const double z = params.beta() * T;
  return -std::log(2.0 * kPi * params.hbar) - 0.5 * log_sinh(z) - 0.5 * std::log(stable_D(z));
}

double normalization(double T, const ModelParams& params) {
  return std::exp(log_normalization(T, params));
}

QuadForm qm_free_kernel(double T, double hbar, double m) {
  require_duration(T);
  QuadForm f = quadform_zero(2, hbar);
  const double w = m / T;
  f.M(0, 0) = w;
  f.M(1, 1) = w;
  f.M(0, 1) = -w;
  f.M(1, 0) = -w;
  // (m / (2 pi i hbar T))^{1/2}
  f.logpref = 0.5 * (std::log(m / (2.0 * kPi * hbar * T)) - cd(0.0, kPi / 2.0));
  return f;
}

QuadForm reduced_kernel(double T, const ModelParams& params) {
  const Coefficients k = coefficients_abcd(T, params, KernelRegime::short_time);
  const double bm = params.beta() * params.m;
  const double omega_tilde = k.omega_short / 4.0;
  QuadForm f = quadform_zero(3, params.hbar);
  Eigen::Vector3d E(-T / params.m, -1.0, 1.0);  // x2 - x1 - T p1 / m
  f.M = (bm * omega_tilde) * (E * E.transpose()).cast<cd>();
  // Prefactor carried over from integrating the output momentum out of the
  // short-time kernel: |N_short| (2 pi hbar / a_short)^{1/2}.
  const double det_qtr = k.d * k.d - k.b * k.c;
  const double log_norm_short =
      0.5 * std::log(std::abs(det_qtr)) - std::log(2.0 * kPi * params.hbar);
  f.logpref = cd(log_norm_short + 0.5 * std::log(2.0 * kPi * params.hbar / k.a), 0.0);
  return f;
}

QuadForm relaxation_kernel(double t, const ModelParams& params, double c0) {
  require_duration(t);
  if (!(c0 > 0.0)) throw RegimeViolation("relaxation_kernel needs c0 > 0");
  const double beta = params.beta();
  const double z = beta * t;
  const double s = 1.0 / (c0 * beta * params.m);
  QuadForm f = quadform_zero(2, params.hbar);
  f.M(0, 0) = s * coth(z);
  f.M(1, 1) = s * coth(z);
  f.M(0, 1) = -s * csch(z);
  f.M(1, 0) = -s * csch(z);
  // Unitary prefactor magnitude.
  f.logpref =
      cd(-0.5 * (std::log(2.0 * kPi * params.hbar * c0 * beta * params.m) + log_sinh(z)), 0.0);
  return f;
}

double gradient_l2_norm(const QuadForm& f) {
  if (f.dim() != 1) throw SingularForm("gradient_l2_norm expects a 1-variable form");
  const Moments mom = moments(f);
  const double nrm = l2_norm(f);
  const cd M = f.M(0, 0);
  const cd B = f.B(0);
  const double mu = mom.mean(0);
  const double q2 = mom.cov(0, 0) + mu * mu;
  const double integ = std::norm(M) * q2 + 2.0 * (std::conj(M) * B).real() * mu + std::norm(B);
  return nrm * std::sqrt(integ) / f.hbar;
}

DecayPoint relaxation_decay(const QuadForm& phi1, double t, const ModelParams& params,
                            double c0) {
  if (phi1.dim() != 1) throw SingularForm("relaxation_decay expects a 1-variable state");
  if (t < 0.0) throw NonpositiveDuration("relaxation_decay needs t >= 0");
  DecayPoint out;
  if (t == 0.0) {
    out.stripped = phi1;
    out.norm = l2_norm(phi1);
    out.grad_norm = gradient_l2_norm(phi1);
    return out;
  }
  QuadForm ker = relaxation_kernel(t, params, c0);
  ker.hbar = phi1.hbar;
  QuadForm joint = quadform_zero(2, phi1.hbar);
  joint.M = ker.M;
  joint.logpref = ker.logpref;
  joint.M(0, 0) += phi1.M(0, 0);
  joint.B(0) = phi1.B(0);
  joint.c = phi1.c;
  joint.logpref += phi1.logpref;
  QuadForm psi = marginalize(joint, {0});
  out.norm = l2_norm(psi);
  // Strip the outgoing quadratic phase coth(beta t)/(c0 beta m).
  QuadForm stripped = psi;
  const double z = params.beta() * t;
  stripped.M(0, 0) -= cd(coth(z) / (c0 * params.beta() * params.m), 0.0);
  out.stripped = stripped;
  out.grad_norm = gradient_l2_norm(stripped);
  return out;
}

}  // namespace subqm
