#pragma once

#include "tsnvae/autodiff.hpp"


#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tsnvae {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update. Parameters without a populated gradient are
// treated as having a zero gradient.
inline void adam_step(std::vector<std::reference_wrapper<ad::Tensor>> params, AdamState& st) {
  if (st.m.empty()) {
    for (const ad::Tensor& p : params) {
      st.m.emplace_back(p.size(), 0.0);
      st.v.emplace_back(p.size(), 0.0);
    }
  }
  if (st.m.size() != params.size())
    throw ad::ShapeError("adam_step: state tracks " + std::to_string(st.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  ++st.step;
  const auto& c = st.config;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Tensor& p = params[k];
    auto& m = st.m[k];
    auto& v = st.v[k];
    if (m.size() != p.size() || (!p.grad.empty() && p.grad.size() != p.size()))
      throw ad::ShapeError("adam_step: parameter " + std::to_string(k) + " changed shape");
    if (p.grad.empty()) p.grad.assign(p.size(), 0.0);
    // Plain loop: Eigen maps peel an address-dependent scalar head, which
    // makes rounding depend on allocation alignment.
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * (g * g);
      p.data[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
  }
}

}  // namespace tsnvae
