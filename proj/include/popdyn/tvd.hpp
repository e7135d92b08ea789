#pragma once

// Exact 1-D total variation denoising:
//   R = argmin ||O - R||_2^2 + lambda * sum_i |R[i+1] - R[i]|
// solved by Condat's direct (taut-string style) algorithm. The algorithm is stated for
// (1/2)||O - R||^2 + mu * TV, so it runs with mu = lambda / 2.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "popdyn/error.hpp"

namespace popdyn {

struct TvdProblem {
  std::vector<double> observed;
  double lambda = 0.0;
};

inline double tv_objective(std::span<const double> observed, std::span<const double> r, double lambda) {
  double fit = 0.0, tv = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) fit += (observed[i] - r[i]) * (observed[i] - r[i]);
  for (std::size_t i = 1; i < r.size(); ++i) tv += std::abs(r[i] - r[i - 1]);
  return fit + lambda * tv;
}

inline std::vector<double> tv_denoise(std::span<const double> input, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("TV penalty lambda must be >= 0");
  const int width = static_cast<int>(input.size());
  std::vector<double> output(input.begin(), input.end());
  if (width <= 1 || lambda == 0.0) return output;
  if (std::all_of(input.begin(), input.end(), [&](double v) { return v == input[0]; })) return output;

  const double mu = 0.5 * lambda;
  int k = 0, k0 = 0;              // current sample, start of current segment
  double umin = mu, umax = -mu;   // dual variable bounds
  double vmin = input[0] - mu, vmax = input[0] + mu;  // bounds on the segment value
  int kplus = 0, kminus = 0;
  const double twomu = 2.0 * mu;
  const double minmu = -mu;
  for (;;) {
    while (k == width - 1) {
      if (umin < 0.0) {
        do output[k0++] = vmin; while (k0 <= kminus);
        umax = (vmin = input[kminus = k = k0]) + (umin = mu) - vmax;
      } else if (umax > 0.0) {
        do output[k0++] = vmax; while (k0 <= kplus);
        umin = (vmax = input[kplus = k = k0]) + (umax = minmu) - vmin;
      } else {
        vmin += umin / (k - k0 + 1);
        do output[k0++] = vmin; while (k0 <= k);
        return output;
      }
    }
    if ((umin += input[k + 1] - vmin) < minmu) {  // negative jump
      do output[k0++] = vmin; while (k0 <= kminus);
      vmax = (vmin = input[kplus = kminus = k = k0]) + twomu;
      umin = mu;
      umax = minmu;
    } else if ((umax += input[k + 1] - vmax) > mu) {  // positive jump
      do output[k0++] = vmax; while (k0 <= kplus);
      vmin = (vmax = input[kplus = kminus = k = k0]) - twomu;
      umin = mu;
      umax = minmu;
    } else {
      ++k;
      if (umin >= mu) {
        vmin += (umin - mu) / ((kminus = k) - k0 + 1);
        umin = mu;
      }
      if (umax <= minmu) {
        vmax += (umax + mu) / ((kplus = k) - k0 + 1);
        umax = minmu;
      }
    }
  }
}

inline std::vector<double> tv_denoise(const TvdProblem& p) {
  if (p.observed.empty()) throw ValidationError("TV denoising needs at least one sample");
  return tv_denoise(p.observed, p.lambda);
}

}  // namespace popdyn
