#pragma once

// Inverse-CDF draws from tabulated screen densities. The density is treated
// as piecewise linear between its grid nodes, so the CDF is piecewise
// quadratic and a draw solves one quadratic per panel.

#include <vector>

#include "subqm/evolution.hpp"
#include "subqm/rng.hpp"

namespace subqm {

class TabulatedSampler {
 public:
  // Throws SamplingDegenerate when the profile carries no usable mass.
  explicit TabulatedSampler(const DensityProfile& profile);

  // Position of the u-quantile, u in [0, 1).
  double quantile(double u) const;

  double sample(Rng& rng) const { return quantile(rng.next_double()); }

  void sample_many(Rng& rng, std::vector<double>& out, long count) const;

 private:
  std::vector<double> x_, rho_, cdf_;
};

// Mean and variance (denominator n) of a sample.
struct SampleStats {
  long n = 0;
  double mean = 0.0;
  double var = 0.0;
};
SampleStats sample_stats(const std::vector<double>& xs);

}  // namespace subqm
