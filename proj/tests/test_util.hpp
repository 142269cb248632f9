#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pathrank/autodiff.hpp"

namespace test_util {

using pathrank::ad::MatD;

struct Coord {
  std::size_t param;
  Eigen::Index r;
  Eigen::Index c;
};

// Central finite differences against analytic gradients at selected
// coordinates. `eval` must rebuild the computation from scratch so the
// perturbed parameter is actually consumed. The denominator floor absorbs
// the FD noise floor (~eps*|f|/h ~ 1e-11 for unit-scale losses at h=1e-5):
// coordinates whose true gradient is essentially zero — e.g. attention key
// biases, which cancel inside softmax — would otherwise compare noise
// against noise.
inline double max_grad_rel_err(
    const std::function<double(const std::vector<MatD>&)>& eval,
    std::vector<MatD> params, const std::vector<MatD>& grads,
    const std::vector<Coord>& coords, double h = 1e-5) {
  double worst = 0.0;
  for (const auto& [pi, r, c] : coords) {
    const double keep = params[pi](r, c);
    params[pi](r, c) = keep + h;
    const double fp = eval(params);
    params[pi](r, c) = keep - h;
    const double fm = eval(params);
    params[pi](r, c) = keep;
    const double fd = (fp - fm) / (2 * h);
    const double an = grads[pi].size() ? grads[pi](r, c) : 0.0;
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace test_util
