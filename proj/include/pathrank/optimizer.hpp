#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pathrank/autodiff.hpp"

namespace pathrank::ad {

template <typename Scalar>
struct AdamConfig {
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

template <typename Scalar>
struct AdamState {
  AdamConfig<Scalar> config;
  std::vector<Mat<Scalar>> m;
  std::vector<Mat<Scalar>> v;
  long step = 0;
};

template <typename Scalar>
AdamState<Scalar> make_adam(const std::vector<Mat<Scalar>>& params,
                            AdamConfig<Scalar> config = {}) {
  AdamState<Scalar> st;
  st.config = config;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
    st.v.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
  }
  return st;
}

// One update with bias correction. Empty gradients (parameters untouched by
// the loss) count as zero.
template <typename Scalar>
void adam_step(std::vector<Mat<Scalar>>& params, const std::vector<Mat<Scalar>>& grads,
               AdamState<Scalar>& st) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  st.step += 1;
  const Scalar b1 = st.config.beta1;
  const Scalar b2 = st.config.beta2;
  const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(st.step));
  const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<Scalar> g = grads[i].size() ? grads[i] : Mat<Scalar>::Zero(params[i].rows(),
                                                                   params[i].cols());
    if (g.rows() != params[i].rows() || g.cols() != params[i].cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    st.m[i] = b1 * st.m[i] + (Scalar(1) - b1) * g;
    st.v[i] = (b2 * st.v[i].array() + (Scalar(1) - b2) * g.array().square()).matrix();
    const auto mhat = st.m[i].array() / c1;
    const auto vhat = st.v[i].array() / c2;
    params[i].array() -= st.config.lr * mhat / (vhat.sqrt() + st.config.eps);
  }
}

}  // namespace pathrank::ad
