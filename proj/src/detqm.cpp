#include "subqm/detqm.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <vector>

#include "subqm/errors.hpp"
#include "subqm/parallel.hpp"

namespace subqm {

namespace {

constexpr cd kI{0.0, 1.0};

double second_gradient(const HamiltonianSpec& H, double q) {
  const double e = 1e-5 * (1.0 + std::abs(q));
  return (H.gradient(q + e) - H.gradient(q - e)) / (2.0 * e);
}

// Kick-drift-kick with the tangent map carried as a product of unit-
// determinant shears and the phase integrand sampled at every substep
// boundary for Simpson's rule.
FlowResult flow_custom(PhasePoint z, double dt_total, const HamiltonianSpec& H) {
  int n = std::max(16, static_cast<int>(std::ceil(std::abs(dt_total) / H.substep)));
  if (n % 2 != 0) ++n;
  const double dt = dt_total / n;
  Eigen::Matrix2d J = Eigen::Matrix2d::Identity();
  std::vector<double> lagr(n + 1);
  const auto phase_rate = [&H](const PhasePoint& w) {
    return w.p * w.p / (2.0 * H.m) - H.potential(w.q);
  };
  lagr[0] = phase_rate(z);
  Eigen::Matrix2d kick = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d drift = Eigen::Matrix2d::Identity();
  drift(0, 1) = dt / H.m;
  for (int s = 0; s < n; ++s) {
    const double g1 = H.gradient(z.q);
    if (!std::isfinite(g1)) throw StepDiverged("flow: non-finite gradient");
    kick(1, 0) = -0.5 * dt * second_gradient(H, z.q);
    J = kick * J;
    const double p_half = z.p - 0.5 * dt * g1;
    z.q += dt * p_half / H.m;
    J = drift * J;
    const double g2 = H.gradient(z.q);
    if (!std::isfinite(g2) || !std::isfinite(z.q)) {
      throw StepDiverged("flow: non-finite state");
    }
    kick(1, 0) = -0.5 * dt * second_gradient(H, z.q);
    J = kick * J;
    z.p = p_half - 0.5 * dt * g2;
    lagr[s + 1] = phase_rate(z);
  }
  double odd = 0.0, even = 0.0;
  for (int s = 1; s < n; s += 2) odd += lagr[s];
  for (int s = 2; s < n; s += 2) even += lagr[s];
  const double action = dt / 3.0 * (lagr[0] + lagr[n] + 4.0 * odd + 2.0 * even);
  return {z, action, J.determinant()};
}

FlowResult flow_closed(PhasePoint z, double dt, const HamiltonianSpec& H) {
  if (H.kind == HamiltonianSpec::Kind::free) {
    FlowResult r;
    r.action = z.p * z.p / (2.0 * H.m) * dt;
    r.z = {z.q + z.p * dt / H.m, z.p};
    r.jacobian = 1.0;
    return r;
  }
  const double w = H.omega, mw = H.m * w;
  const double c = std::cos(w * dt), s = std::sin(w * dt);
  FlowResult r;
  r.z = {z.q * c + z.p / mw * s, z.p * c - mw * z.q * s};
  const double c2 = std::cos(2.0 * w * dt), s2 = std::sin(2.0 * w * dt);
  r.action = (z.p * z.p / (2.0 * H.m) - 0.5 * mw * w * z.q * z.q) * s2 / (2.0 * w) +
             0.5 * z.q * z.p * (c2 - 1.0);
  r.jacobian = c * c + s * s;
  return r;
}

struct Stencil {
  int idx[4];
  double w[4];
};

Stencil cubic_stencil(double u_cells, int n) {
  int i = static_cast<int>(std::floor(u_cells));
  if (i > n - 2) i = n - 2;
  if (i < 0) i = 0;
  const double u = u_cells - i;
  const double u2 = u * u, u3 = u2 * u;
  Stencil st;
  st.w[0] = 0.5 * (-u3 + 2.0 * u2 - u);
  st.w[1] = 0.5 * (3.0 * u3 - 5.0 * u2 + 2.0);
  st.w[2] = 0.5 * (-3.0 * u3 + 4.0 * u2 + u);
  st.w[3] = 0.5 * (u3 - u2);
  for (int k = 0; k < 4; ++k) {
    st.idx[k] = std::clamp(i - 1 + k, 0, n - 1);
  }
  return st;
}

cd interp_value(const GridState& s, double q, double p) {
  const double ux = (q - s.x_lo) / s.hx;
  const double up = (p - s.p_lo) / s.hp;
  const int nx = s.nx(), np = s.np();
  if (ux < 0.0 || ux > nx - 1 || up < 0.0 || up > np - 1) return cd{0.0, 0.0};
  const Stencil sx = cubic_stencil(ux, nx);
  const Stencil sp = cubic_stencil(up, np);
  cd acc{0.0, 0.0};
  for (int a = 0; a < 4; ++a) {
    cd row{0.0, 0.0};
    for (int b = 0; b < 4; ++b) {
      row += sp.w[b] * s.psi(sx.idx[a], sp.idx[b]);
    }
    acc += sx.w[a] * row;
  }
  return acc;
}

void validate_grid(const GridState& s) {
  if (s.nx() < 8 || s.np() < 8) throw ConfigInvalid("grid: need at least 8x8 nodes");
  if (!(s.hx > 0.0) || !(s.hp > 0.0)) throw ConfigInvalid("grid: spacings must be positive");
  if (!(s.hbar > 0.0)) throw ConfigInvalid("grid: hbar must be positive");
}

// Run fn over rows, funneling the first worker exception to the caller.
template <typename Fn>
void rows_parallel(int nx, Fn&& fn) {
  std::mutex mu;
  std::exception_ptr err = nullptr;
  parallel_for(nx, [&](int lo, int hi) {
    try {
      for (int i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      const std::lock_guard<std::mutex> lock(mu);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
}

}  // namespace

HamiltonianSpec HamiltonianSpec::free_particle(double m) {
  HamiltonianSpec H;
  H.kind = Kind::free;
  H.m = m;
  return H;
}

HamiltonianSpec HamiltonianSpec::harmonic(double m, double omega) {
  if (!(omega > 0.0)) throw ConfigInvalid("harmonic: omega must be positive");
  HamiltonianSpec H;
  H.kind = Kind::harmonic;
  H.m = m;
  H.omega = omega;
  return H;
}

HamiltonianSpec HamiltonianSpec::custom(double m, std::function<double(double)> V,
                                        std::function<double(double)> dV) {
  if (!V || !dV) throw ConfigInvalid("custom hamiltonian: potential and gradient required");
  HamiltonianSpec H;
  H.kind = Kind::custom;
  H.m = m;
  H.V = std::move(V);
  H.dV = std::move(dV);
  return H;
}

double HamiltonianSpec::potential(double q) const {
  switch (kind) {
    case Kind::free:
      return 0.0;
    case Kind::harmonic:
      return 0.5 * m * omega * omega * q * q;
    case Kind::custom:
      return V(q);
  }
  return 0.0;
}

double HamiltonianSpec::gradient(double q) const {
  switch (kind) {
    case Kind::free:
      return 0.0;
    case Kind::harmonic:
      return m * omega * omega * q;
    case Kind::custom:
      return dV(q);
  }
  return 0.0;
}

FlowResult hamilton_flow_action(PhasePoint z, double t1, double t2,
                                const HamiltonianSpec& H) {
  const double dt = t2 - t1;
  if (!std::isfinite(dt)) throw ConfigInvalid("flow: duration must be finite");
  if (!(H.m > 0.0)) throw ConfigInvalid("flow: mass must be positive");
  if (dt == 0.0) return {z, 0.0, 1.0};
  if (H.kind == HamiltonianSpec::Kind::custom) return flow_custom(z, dt, H);
  return flow_closed(z, dt, H);
}

PhasePoint hamilton_flow(PhasePoint z, double t1, double t2, const HamiltonianSpec& H) {
  return hamilton_flow_action(z, t1, t2, H).z;
}

GridState make_grid_state(const std::function<cd(double, double)>& f, double x_lo,
                          double x_hi, double p_lo, double p_hi, int nx, int np,
                          double t, double hbar) {
  if (nx < 8 || np < 8) throw ConfigInvalid("grid: need at least 8x8 nodes");
  if (!(x_hi > x_lo) || !(p_hi > p_lo)) throw ConfigInvalid("grid: empty window");
  if (!(hbar > 0.0)) throw ConfigInvalid("grid: hbar must be positive");
  if (!f) throw ConfigInvalid("grid: sampler required");
  GridState s;
  s.x_lo = x_lo;
  s.p_lo = p_lo;
  s.hx = (x_hi - x_lo) / (nx - 1);
  s.hp = (p_hi - p_lo) / (np - 1);
  s.psi.resize(nx, np);
  s.t = t;
  s.hbar = hbar;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < np; ++j) {
      s.psi(i, j) = f(s.x(i), s.p(j));
    }
  }
  return s;
}

GridState gaussian_blob(double x0, double p0, double sx, double sp, double k, int nx,
                        int np, double hbar) {
  if (!(sx > 0.0) || !(sp > 0.0)) throw ConfigInvalid("blob: widths must be positive");
  const double rx = kGridDefaultSigmas * sx, rp = kGridDefaultSigmas * sp;
  return make_grid_state(
      [=](double x, double p) {
        const double ax = (x - x0) / sx, ap = (p - p0) / sp;
        return std::exp(cd(-0.5 * (ax * ax + ap * ap), k * x / hbar));
      },
      x0 - rx, x0 + rx, p0 - rp, p0 + rp, nx, np, 0.0, hbar);
}

double grid_norm(const GridState& s) {
  validate_grid(s);
  return std::sqrt(s.psi.squaredNorm() * s.hx * s.hp);
}

double support_area(const GridState& s, double level) {
  validate_grid(s);
  if (!(level > 0.0) || !(level < 1.0)) {
    throw ConfigInvalid("support area: level must lie in (0, 1)");
  }
  const double peak = s.psi.cwiseAbs2().maxCoeff();
  if (peak <= 0.0) return 0.0;
  const double cut = level * peak;
  std::ptrdiff_t count = 0;
  for (int i = 0; i < s.nx(); ++i) {
    for (int j = 0; j < s.np(); ++j) {
      if (std::norm(s.psi(i, j)) > cut) ++count;
    }
  }
  return static_cast<double>(count) * s.hx * s.hp;
}

GridState detqm_evolve(const GridState& s, double t1, double t2,
                       const HamiltonianSpec& H) {
  validate_grid(s);
  if (!std::isfinite(t2 - t1)) throw ConfigInvalid("evolve: duration must be finite");
  GridState out = s;
  out.t = t2;
  if (t1 == t2) return out;

  // Every support node, flowed forward, must still land on the grid
  // (half-cell slack); otherwise amplitude would be pushed past the sampled
  // window and silently lost.
  const double peak = s.psi.cwiseAbs().maxCoeff();
  if (peak > 0.0) {
    const double thr = 1e-6 * peak;
    const double mx = 0.5 * s.hx, mp = 0.5 * s.hp;
    std::atomic<bool> escaped{false};
    rows_parallel(s.nx(), [&](int i) {
      if (escaped.load(std::memory_order_relaxed)) return;
      for (int j = 0; j < s.np(); ++j) {
        if (std::abs(s.psi(i, j)) <= thr) continue;
        const PhasePoint fwd = hamilton_flow({s.x(i), s.p(j)}, t1, t2, H);
        if (fwd.q < s.x_lo - mx || fwd.q > s.x_hi() + mx || fwd.p < s.p_lo - mp ||
            fwd.p > s.p_hi() + mp) {
          escaped.store(true, std::memory_order_relaxed);
          return;
        }
      }
    });
    if (escaped.load()) {
      throw SupportEscapedGrid("evolve: support leaves the sampled window");
    }
  }

  rows_parallel(s.nx(), [&](int i) {
    for (int j = 0; j < s.np(); ++j) {
      const FlowResult back = hamilton_flow_action({s.x(i), s.p(j)}, t2, t1, H);
      const cd value = interp_value(s, back.z.q, back.z.p);
      out.psi(i, j) = std::exp(kI * (-back.action) / s.hbar) * value;
    }
  });
  return out;
}

Eigen::MatrixXcd transport_rhs(const GridState& s, const HamiltonianSpec& H) {
  validate_grid(s);
  const int nx = s.nx(), np = s.np();
  const cd ih = kI * s.hbar;
  const auto& psi = s.psi;
  const auto dx = [&](int i, int j) {
    if (i == 0) return (-3.0 * psi(0, j) + 4.0 * psi(1, j) - psi(2, j)) / (2.0 * s.hx);
    if (i == nx - 1) {
      return (3.0 * psi(i, j) - 4.0 * psi(i - 1, j) + psi(i - 2, j)) / (2.0 * s.hx);
    }
    return (psi(i + 1, j) - psi(i - 1, j)) / (2.0 * s.hx);
  };
  const auto dp = [&](int i, int j) {
    if (j == 0) return (-3.0 * psi(i, 0) + 4.0 * psi(i, 1) - psi(i, 2)) / (2.0 * s.hp);
    if (j == np - 1) {
      return (3.0 * psi(i, j) - 4.0 * psi(i, j - 1) + psi(i, j - 2)) / (2.0 * s.hp);
    }
    return (psi(i, j + 1) - psi(i, j - 1)) / (2.0 * s.hp);
  };
  Eigen::MatrixXcd out(nx, np);
  const bool flat = H.kind == HamiltonianSpec::Kind::free;
  for (int i = 0; i < nx; ++i) {
    const double v = flat ? 0.0 : H.potential(s.x(i));
    const double vx = flat ? 0.0 : H.gradient(s.x(i));
    for (int j = 0; j < np; ++j) {
      const double p = s.p(j);
      out(i, j) = -(p * p / (2.0 * H.m)) * psi(i, j) - ih * (p / H.m) * dx(i, j) + v * psi(i, j);
      if (!flat) out(i, j) += ih * vx * dp(i, j);
    }
  }
  return out;
}

Eigen::MatrixXcd relaxed_rhs(const GridState& s, double m, double beta) {
  validate_grid(s);
  if (!(m > 0.0) || !(beta >= 0.0)) throw ConfigInvalid("relaxed rhs: need m > 0, beta >= 0");
  Eigen::MatrixXcd out = transport_rhs(s, HamiltonianSpec::free_particle(m));
  const int np = s.np();
  const double coef = 0.5 * s.hbar * s.hbar * m * beta * beta / (s.hp * s.hp);
  for (int i = 0; i < s.nx(); ++i) {
    for (int j = 0; j < np; ++j) {
      const int jc = std::clamp(j, 1, np - 2);
      const cd dpp = s.psi(i, jc + 1) - 2.0 * s.psi(i, jc) + s.psi(i, jc - 1);
      out(i, j) -= coef * dpp;
    }
  }
  return out;
}

Eigen::MatrixXcd residual_field(const GridState& s, const HamiltonianSpec& H) {
  validate_grid(s);
  double pmax = std::max(std::abs(s.p_lo), std::abs(s.p_hi()));
  if (pmax <= 0.0) pmax = 1.0;
  const double delta = 1e-2 * s.hx * H.m / pmax;
  const GridState fwd = detqm_evolve(s, s.t, s.t + delta, H);
  const GridState bwd = detqm_evolve(s, s.t, s.t - delta, H);
  const Eigen::MatrixXcd psi_t = (fwd.psi - bwd.psi) / (2.0 * delta);
  return kI * s.hbar * psi_t - transport_rhs(s, H);
}

double detqm_residual(const GridState& s, const HamiltonianSpec& H) {
  const Eigen::MatrixXcd r = residual_field(s, H);
  const int nx = s.nx(), np = s.np();
  double acc = 0.0;
  for (int i = 2; i < nx - 2; ++i) {
    for (int j = 2; j < np - 2; ++j) {
      acc += std::norm(r(i, j));
    }
  }
  return std::sqrt(acc * s.hx * s.hp);
}

}  // namespace subqm
