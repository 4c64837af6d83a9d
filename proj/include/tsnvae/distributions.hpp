#pragma once

// Diagonal Gaussians, both as plain values and as nodes on a tape.

#include "tsnvae/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnvae {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 5.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> m, std::vector<double> ls) : mean(std::move(m)), log_std(std::move(ls)) {
    if (mean.size() != log_std.size())
      throw ad::ShapeError("DiagGaussian: mean has " + std::to_string(mean.size()) + " entries, log_std has " +
                           std::to_string(log_std.size()));
  }
  static DiagGaussian isotropic(std::vector<double> m, double std_dev) {
    const auto n = m.size();
    return {std::move(m), std::vector<double>(n, std::log(std_dev))};
  }

  std::size_t dim() const { return mean.size(); }
  double std_dev(std::size_t i) const { return std::exp(std::clamp(log_std[i], kLogStdMin, kLogStdMax)); }
};

inline double gaussian_log_prob(std::span<const double> x, const DiagGaussian& d) {
  if (x.size() != d.dim())
    throw ad::ShapeError("gaussian_log_prob: x has " + std::to_string(x.size()) + " entries, distribution has " +
                         std::to_string(d.dim()));
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ls = std::clamp(d.log_std[i], kLogStdMin, kLogStdMax);
    const double z = (x[i] - d.mean[i]) * std::exp(-ls);
    lp += -kHalfLog2Pi - ls - 0.5 * z * z;
  }
  return lp;
}

// KL(q || p), summed over dimensions.
inline double diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim())
    throw ad::ShapeError("diag_gaussian_kl: dimensions " + std::to_string(q.dim()) + " and " +
                         std::to_string(p.dim()) + " differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double lq = std::clamp(q.log_std[i], kLogStdMin, kLogStdMax);
    const double lp = std::clamp(p.log_std[i], kLogStdMin, kLogStdMax);
    const double ratio = std::exp(2.0 * (lq - lp));
    const double dm = (q.mean[i] - p.mean[i]) * std::exp(-lp);
    // log(sp/sq) + (sq^2 + dm^2) / (2 sp^2) - 1/2, written to stay exact at q == p
    kl += (lp - lq) + 0.5 * (ratio - 1.0) + 0.5 * dm * dm;
  }
  return kl;
}

template <class Rng>
std::vector<double> sample_reparameterized(const DiagGaussian& d, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> x(d.dim());
  for (std::size_t i = 0; i < d.dim(); ++i) x[i] = d.mean[i] + d.std_dev(i) * n01(rng);
  return x;
}

// Batched diagonal Gaussian living on a tape: mean and log_std are [N, D].
struct GaussianVar {
  ad::Var mean;
  ad::Var log_std;
};

inline GaussianVar make_gaussian(const ad::Var& mean, const ad::Var& raw_log_std) {
  if (mean.shape() != raw_log_std.shape())
    throw ad::ShapeError("gaussian: mean " + ad::shape_str(mean.shape()) + " vs log_std " +
                         ad::shape_str(raw_log_std.shape()));
  return {mean, ad::clamp(raw_log_std, kLogStdMin, kLogStdMax)};
}

inline GaussianVar constant_gaussian(ad::Tape& tape, const ad::Shape& shape, double mean, double std_dev) {
  return {tape.constant(ad::Tensor::filled(shape, mean)), tape.constant(ad::Tensor::filled(shape, std::log(std_dev)))};
}

// Sum over all entries of log N(x | mean, std^2).
inline ad::Var gaussian_log_prob(const ad::Var& x, const GaussianVar& d) {
  if (x.shape() != d.mean.shape())
    throw ad::ShapeError("gaussian_log_prob: x " + ad::shape_str(x.shape()) + " vs mean " +
                         ad::shape_str(d.mean.shape()));
  using namespace ad;
  const Var z = mul(sub(x, d.mean), ad::exp(scale(d.log_std, -1.0)));
  const Var per = add_scalar(add(scale(square(z), -0.5), scale(d.log_std, -1.0)), -kHalfLog2Pi);
  return sum(per);
}

// Sum over all entries of KL(q || p).
inline ad::Var diag_gaussian_kl(const GaussianVar& q, const GaussianVar& p) {
  if (q.mean.shape() != p.mean.shape())
    throw ad::ShapeError("diag_gaussian_kl: " + ad::shape_str(q.mean.shape()) + " vs " +
                         ad::shape_str(p.mean.shape()));
  using namespace ad;
  const Var diff = sub(q.log_std, p.log_std);
  const Var ratio = ad::exp(scale(diff, 2.0));
  const Var dm = mul(sub(q.mean, p.mean), ad::exp(scale(p.log_std, -1.0)));
  const Var per = add(scale(diff, -1.0), scale(add(add_scalar(ratio, -1.0), square(dm)), 0.5));
  return sum(per);
}

// mean + exp(log_std) * eps with eps ~ N(0, I) drawn from `rng`.
template <class Rng>
ad::Var sample_reparameterized(const GaussianVar& d, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  ad::Tensor eps = ad::Tensor::zeros(d.mean.shape());
  for (auto& e : eps.data) e = n01(rng);
  ad::Tape& tape = *d.mean.tape();
  return ad::add(d.mean, ad::mul(ad::exp(d.log_std), tape.constant(std::move(eps))));
}

}  // namespace tsnvae
