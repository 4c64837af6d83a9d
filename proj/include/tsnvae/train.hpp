#pragma once

#include "tsnvae/adam.hpp"
#include "tsnvae/dataset.hpp"
#include "tsnvae/model.hpp"
#include "tsnvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnvae {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& msg)
      : std::runtime_error("training step " + std::to_string(step) + ": " + msg), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<double> losses;  // one per step
};

using ProgressFn = std::function<void(std::size_t step, double loss)>;

// Episode indices for one mini-batch: a fresh draw without replacement.
inline std::vector<std::size_t> draw_batch(std::size_t dataset_size, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t k = std::min(batch, dataset_size);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, dataset_size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

// Step schedule: `lr` for the first lr_decay_at of training, then lr_final.
// At the full rate Adam moves millimetre-scale outputs by a sizeable fraction
// of a millimetre per step, so the goal predictor wanders by about 1 mm
// between checkpoints; the low-rate tail lets it settle.
inline double learning_rate(const HyperParams& hp, std::size_t step) {
  const auto switch_at = static_cast<std::size_t>(std::llround(hp.lr_decay_at * static_cast<double>(hp.train_steps)));
  return step < switch_at ? hp.lr : hp.lr_final;
}

// One optimizer step on the variant objective; returns the batch loss.
inline double train_step(ModelBundle& m, AdamState& adam, const std::vector<EpisodeRecord>& data,
                         const std::vector<std::size_t>& batch, std::uint64_t seed, std::size_t step) {
  std::vector<const EpisodeRecord*> eps;
  std::vector<Rng> rngs;
  for (auto i : batch) {
    eps.push_back(&data[i]);
    rngs.push_back(make_rng(derive_seed(seed, "noise", step * data.size() + i)));
  }
  m.zero_grad();
  ad::Tape tape;
  Objective obj(tape, m, std::move(eps), std::move(rngs));
  const ad::Var loss = obj.total(m.hp.variant);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw TrainingError(step, "loss is not finite (" + std::to_string(value) + ")");
  tape.backward(loss);
  std::vector<std::reference_wrapper<ad::Tensor>> params;
  for (auto& [_, t] : m.named_parameters()) params.emplace_back(*t);
  adam_step(params, adam);
  return value;
}

inline TrainResult train(const std::vector<EpisodeRecord>& data, const HyperParams& hp, std::uint64_t seed,
                         const ProgressFn& progress = {}) {
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  TrainResult r{ModelBundle::create(hp, derive_seed(seed, "init")), {}};
  AdamState adam;
  Rng batches = make_rng(derive_seed(seed, "batches"));
  r.losses.reserve(hp.train_steps);
  for (std::size_t step = 0; step < hp.train_steps; ++step) {
    adam.config.lr = learning_rate(hp, step);
    const auto batch = draw_batch(data.size(), hp.batch_episodes, batches);
    r.losses.push_back(train_step(r.bundle, adam, data, batch, seed, step));
    if (progress) progress(step, r.losses.back());
  }
  for (const auto& [name, t] : r.bundle.named_parameters())
    for (double v : t->data)
      if (!std::isfinite(v)) throw TrainingError(hp.train_steps, "parameter " + name + " is not finite");
  return r;
}

}  // namespace tsnvae
