#pragma once

// Central finite-difference gradient checks shared by the test binaries.

#include "tsnvae/autodiff.hpp"
#include "tsnvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace tsnvae::testing {

struct GradCheck {
  std::vector<double> analytic;
  std::vector<double> numeric;

  // ||a - n|| / max(||a||, ||n||), 0 when both vanish.
  double relative_error() const {
    double d = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      d += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double scale = std::sqrt(std::max(na, nn));
    return scale == 0.0 ? 0.0 : std::sqrt(d) / scale;
  }
};

struct Coord {
  ad::Tensor* tensor;
  std::size_t index;
};

// `loss` evaluates the scalar objective with gradients accumulated into the
// parameters' grad buffers when `backprop` is set.
using LossFn = std::function<double(bool backprop)>;

inline GradCheck check_gradients(const std::vector<ad::Tensor*>& params, const std::vector<Coord>& coords,
                                 const LossFn& loss, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  GradCheck out;
  for (const auto& c : coords) {
    out.analytic.push_back(c.tensor->grad.empty() ? 0.0 : c.tensor->grad[c.index]);
    double& x = c.tensor->data[c.index];
    const double x0 = x;
    x = x0 + h;
    const double fp = loss(false);
    x = x0 - h;
    const double fm = loss(false);
    x = x0;
    out.numeric.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

inline std::vector<Coord> all_coords(const std::vector<ad::Tensor*>& params) {
  std::vector<Coord> out;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) out.push_back({p, i});
  return out;
}

// Up to `n` coordinates per tensor, chosen by `rng`.
inline std::vector<Coord> sample_coords(const std::vector<ad::Tensor*>& params, std::size_t n, Rng& rng) {
  std::vector<Coord> out;
  for (auto* p : params) {
    if (p->size() <= n) {
      for (std::size_t i = 0; i < p->size(); ++i) out.push_back({p, i});
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, p->size() - 1);
    for (std::size_t k = 0; k < n; ++k) out.push_back({p, pick(rng)});
  }
  return out;
}

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool trainable = true) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape), trainable);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace tsnvae::testing
