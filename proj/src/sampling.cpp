#include "subqm/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "subqm/errors.hpp"

namespace subqm {

TabulatedSampler::TabulatedSampler(const DensityProfile& profile)
    : x_(profile.x), rho_(profile.rho) {
  if (x_.size() < 2 || x_.size() != rho_.size()) {
    throw SamplingDegenerate("sampler: density table needs at least two nodes");
  }
  for (double& r : rho_) {
    if (!std::isfinite(r)) throw SamplingDegenerate("sampler: density has non-finite nodes");
    r = std::max(r, 0.0);
  }
  cdf_.resize(x_.size());
  cdf_[0] = 0.0;
  for (size_t i = 1; i < x_.size(); ++i) {
    const double h = x_[i] - x_[i - 1];
    if (!(h > 0.0)) throw SamplingDegenerate("sampler: grid must be strictly increasing");
    cdf_[i] = cdf_[i - 1] + 0.5 * h * (rho_[i] + rho_[i - 1]);
  }
  const double total = cdf_.back();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw SamplingDegenerate("sampler: window mass is not positive");
  }
  for (double& c : cdf_) c /= total;
  cdf_.back() = 1.0;
  const double norm = 1.0 / total;
  for (double& r : rho_) r *= norm;
}

double TabulatedSampler::quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  size_t i = std::min<size_t>(cdf_.size() - 1, it - cdf_.begin());
  if (i == 0) i = 1;
  const double h = x_[i] - x_[i - 1];
  const double mass = cdf_[i] - cdf_[i - 1];
  if (!(mass > 0.0)) return x_[i - 1];
  const double s = (u - cdf_[i - 1]) / mass;  // target fraction of the panel mass
  const double r0 = rho_[i - 1], r1 = rho_[i];
  // Panel CDF fraction at offset t in [0,1]: (r0 t + (r1-r0) t^2/2) / ((r0+r1)/2).
  const double a = 0.5 * (r1 - r0), b = r0, c = -s * 0.5 * (r0 + r1);
  double t;
  if (std::abs(a) < 1e-14 * (std::abs(b) + std::abs(a))) {
    t = b > 0.0 ? -c / b : s;
  } else {
    const double disc = std::max(0.0, b * b - 4.0 * a * c);
    // Stable root in [0,1]: q-form avoids cancellation for either sign of a.
    const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    const double t1 = b != 0.0 || q != 0.0 ? c / q : s;
    const double t2 = a != 0.0 ? q / a : t1;
    t = (t1 >= -1e-12 && t1 <= 1.0 + 1e-12) ? t1 : t2;
  }
  return x_[i - 1] + h * std::clamp(t, 0.0, 1.0);
}

void TabulatedSampler::sample_many(Rng& rng, std::vector<double>& out, long count) const {
  if (count < 0) throw InvalidCount("sampler: count must be nonnegative");
  out.resize(static_cast<size_t>(count));
  for (long i = 0; i < count; ++i) out[static_cast<size_t>(i)] = sample(rng);
}

SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.n = static_cast<long>(xs.size());
  if (s.n == 0) return s;
  double acc = 0.0;
  for (double v : xs) acc += v;
  s.mean = acc / static_cast<double>(s.n);
  double v2 = 0.0;
  for (double v : xs) v2 += (v - s.mean) * (v - s.mean);
  s.var = v2 / static_cast<double>(s.n);
  return s;
}

}  // namespace subqm
