#pragma once

// Dense layers on top of the autodiff tape.

#include "tsnvae/autodiff.hpp"
#include "tsnvae/rng.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tsnvae::nn {

struct Linear {
  ad::Tensor weight;  // [out, in]
  ad::Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    weight = ad::Tensor::zeros({out, in}, true);
    bias = ad::Tensor::zeros({out}, true);
    for (auto& w : weight.data) w = u(rng);
    for (auto& b : bias.data) b = u(rng);
  }

  std::size_t in() const { return weight.shape[1]; }
  std::size_t out() const { return weight.shape[0]; }
};

enum class Output { Linear, Sigmoid };

// Fully connected stack, leaky-ReLU between layers.
struct Mlp {
  std::vector<Linear> layers;
  Output output = Output::Linear;
  double slope = 0.2;

  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Rng& rng, Output out = Output::Linear, double leaky_slope = 0.2)
      : output(out), slope(leaky_slope) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers.emplace_back(widths[i], widths[i + 1], rng);
  }

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }

  // Backward passes accumulate into the layers' grad buffers.
  ad::Var forward(ad::Tape& tape, ad::Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = const_cast<Linear&>(layers[i]);
      x = ad::affine(x, tape.parameter(l.weight), tape.parameter(l.bias));
      if (i + 1 < layers.size()) x = ad::leaky_relu(x, slope);
    }
    return output == Output::Sigmoid ? ad::sigmoid(x) : x;
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, ad::Tensor*>>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.emplace_back(prefix + "." + std::to_string(i) + ".weight", &layers[i].weight);
      out.emplace_back(prefix + "." + std::to_string(i) + ".bias", &layers[i].bias);
    }
  }
};

}  // namespace tsnvae::nn
