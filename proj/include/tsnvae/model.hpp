#pragma once

// Tactile-sensitive NewtonianVAE and the NewtonianVAE baselines: networks,
// transition priors and training objectives.

#include "tsnvae/autodiff.hpp"
#include "tsnvae/dataset.hpp"
#include "tsnvae/distributions.hpp"
#include "tsnvae/io.hpp"
#include "tsnvae/nn.hpp"
#include "tsnvae/rng.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tsnvae {

enum class Variant { TsNvae, Nvae, NvaeTrainAbc, NvaeTactile, TsNvaeSigmaX1, TsNvaeNoAdditionalKl };

inline constexpr std::array kAllVariants = {Variant::TsNvae,      Variant::Nvae,          Variant::NvaeTrainAbc,
                                            Variant::NvaeTactile, Variant::TsNvaeSigmaX1, Variant::TsNvaeNoAdditionalKl};

inline std::string_view variant_tag(Variant v) {
  switch (v) {
    case Variant::TsNvae: return "TS-NVAE";
    case Variant::Nvae: return "NVAE";
    case Variant::NvaeTrainAbc: return "NVAE/trainABC";
    case Variant::NvaeTactile: return "NVAE+tactile";
    case Variant::TsNvaeSigmaX1: return "TS-NVAE/sigma_x=1";
    case Variant::TsNvaeNoAdditionalKl: return "TS-NVAE/NoAdditionalKL";
  }
  return "?";
}

inline Variant parse_variant(std::string_view tag) {
  for (auto v : kAllVariants)
    if (variant_tag(v) == tag) return v;
  throw ConfigError("unknown variant \"" + std::string(tag) + "\"");
}

// Velocity actions with the x + dt u prior (otherwise the double-integrator prior).
inline bool uses_simplified_prior(Variant v) {
  return v == Variant::TsNvae || v == Variant::TsNvaeSigmaX1 || v == Variant::TsNvaeNoAdditionalKl;
}
inline bool uses_tactile(Variant v) { return uses_simplified_prior(v) || v == Variant::NvaeTactile; }
inline bool uses_additional_kl(Variant v) { return v == Variant::TsNvae || v == Variant::TsNvaeSigmaX1; }
inline bool uses_trainable_abc(Variant v) { return v == Variant::NvaeTrainAbc; }

struct HyperParams {
  Variant variant = Variant::TsNvae;
  std::size_t latent_dim = 2;
  double dt = 0.5;
  double sigma_x = 1e-4;        // simplified transition prior std
  double sigma_g = 0.0015;      // insertion-position prior std
  double nvae_sigma = 0.1;      // double-integrator prior std
  double lr = 3e-4;
  double lr_final = 3e-5;       // rate after the decay point
  double lr_decay_at = 0.75;    // fraction of train_steps run at `lr`
  std::size_t batch_episodes = 8;
  std::size_t train_steps = 20000;
  double leaky_slope = 0.2;
  // Network geometry.
  std::size_t camera_size = 32;
  std::size_t tactile_size = 24;
  std::size_t camera_pool = 2;
  std::vector<std::size_t> encoder_hidden{256, 64};
  std::vector<std::size_t> predictor_hidden{16, 16};
  std::vector<std::size_t> abc_hidden{16, 16};

  static HyperParams for_variant(Variant v) {
    HyperParams hp;
    hp.variant = v;
    hp.sigma_x = v == Variant::TsNvaeSigmaX1 ? 1.0 : 1e-4;
    return hp;
  }

  std::size_t camera_pixels() const { return camera_size * camera_size * 3; }
  std::size_t tactile_pixels() const { return tactile_size * tactile_size * 3; }
};

inline void to_json(nlohmann::json& j, const HyperParams& h) {
  j = {{"variant", variant_tag(h.variant)},
       {"latent_dim", h.latent_dim},
       {"dt", h.dt},
       {"sigma_x", h.sigma_x},
       {"sigma_g", h.sigma_g},
       {"nvae_sigma", h.nvae_sigma},
       {"lr", h.lr},
       {"lr_final", h.lr_final},
       {"lr_decay_at", h.lr_decay_at},
       {"batch_episodes", h.batch_episodes},
       {"train_steps", h.train_steps},
       {"leaky_slope", h.leaky_slope},
       {"camera_size", h.camera_size},
       {"tactile_size", h.tactile_size},
       {"camera_pool", h.camera_pool},
       {"encoder_hidden", h.encoder_hidden},
       {"predictor_hidden", h.predictor_hidden},
       {"abc_hidden", h.abc_hidden}};
}

inline void from_json(const nlohmann::json& j, HyperParams& h) {
  require_known_keys(j,
                     {"variant", "latent_dim", "dt", "sigma_x", "sigma_g", "nvae_sigma", "lr", "lr_final", "lr_decay_at",
                      "batch_episodes", "train_steps", "leaky_slope", "camera_size", "tactile_size", "camera_pool", "encoder_hidden",
                      "predictor_hidden", "abc_hidden"},
                     "train");
  if (j.contains("variant")) h.variant = parse_variant(j.at("variant").get<std::string>());
  read_if(j, "latent_dim", h.latent_dim);
  read_if(j, "dt", h.dt);
  read_if(j, "sigma_x", h.sigma_x);
  read_if(j, "sigma_g", h.sigma_g);
  read_if(j, "nvae_sigma", h.nvae_sigma);
  read_if(j, "lr", h.lr);
  read_if(j, "lr_final", h.lr_final);
  read_if(j, "lr_decay_at", h.lr_decay_at);
  if (!(h.lr_decay_at >= 0.0 && h.lr_decay_at <= 1.0))
    throw ConfigError("train.lr_decay_at must lie in [0, 1], got " + std::to_string(h.lr_decay_at));
  read_if(j, "batch_episodes", h.batch_episodes);
  read_if(j, "train_steps", h.train_steps);
  read_if(j, "leaky_slope", h.leaky_slope);
  read_if(j, "camera_size", h.camera_size);
  read_if(j, "tactile_size", h.tactile_size);
  read_if(j, "camera_pool", h.camera_pool);
  read_if(j, "encoder_hidden", h.encoder_hidden);
  read_if(j, "predictor_hidden", h.predictor_hidden);
  read_if(j, "abc_hidden", h.abc_hidden);
}

enum class AbcMode { Fixed, Trainable };

// f_A, f_B, f_C act elementwise: A = f_A, B = -exp(f_B), C = exp(f_C).
struct NvaeTransitionParams {
  AbcMode mode = AbcMode::Fixed;
  nn::Mlp f_a, f_b, f_c;
  double sigma = 0.1;
};

struct ModelBundle {
  HyperParams hp;
  nn::Mlp camera_encoder;   // image -> (mean, log_std) of x
  nn::Mlp camera_decoder;   // x -> image mean
  nn::Mlp tactile_encoder;  // tactile image -> (mean, log_std) of z
  nn::Mlp tactile_decoder;  // z -> tactile image mean
  nn::Mlp goal_predictor;   // z -> (mean, log_std) of x_g
  NvaeTransitionParams transition;

  static ModelBundle create(const HyperParams& hp, std::uint64_t seed) {
    ModelBundle m;
    m.hp = hp;
    const std::size_t d = hp.latent_dim;
    const std::size_t pool = hp.camera_pool == 0 ? 1 : hp.camera_pool;
    const std::size_t cam_in = (hp.camera_size / pool) * (hp.camera_size / pool) * 3;
    auto widths = [](std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
      std::vector<std::size_t> w{in};
      w.insert(w.end(), hidden.begin(), hidden.end());
      w.push_back(out);
      return w;
    };
    auto mirrored = [&](std::size_t out) {
      std::vector<std::size_t> w{d};
      w.insert(w.end(), hp.encoder_hidden.rbegin(), hp.encoder_hidden.rend());
      w.push_back(out);
      return w;
    };
    auto stream = [&](std::string_view name) { return make_rng(derive_seed(seed, name)); };
    auto r1 = stream("camera_encoder");
    m.camera_encoder = nn::Mlp(widths(cam_in, hp.encoder_hidden, 2 * d), r1, nn::Output::Linear, hp.leaky_slope);
    auto r2 = stream("camera_decoder");
    m.camera_decoder = nn::Mlp(mirrored(hp.camera_pixels()), r2, nn::Output::Sigmoid, hp.leaky_slope);
    auto r3 = stream("tactile_encoder");
    m.tactile_encoder = nn::Mlp(widths(hp.tactile_pixels(), hp.encoder_hidden, 2 * d), r3, nn::Output::Linear,
                                hp.leaky_slope);
    auto r4 = stream("tactile_decoder");
    m.tactile_decoder = nn::Mlp(mirrored(hp.tactile_pixels()), r4, nn::Output::Sigmoid, hp.leaky_slope);
    auto r5 = stream("goal_predictor");
    m.goal_predictor = nn::Mlp(widths(d, hp.predictor_hidden, 2 * d), r5, nn::Output::Linear, hp.leaky_slope);
    // Gaussian heads start at the goal-prior scale. From log_std = 0 Adam
    // needs tens of thousands of steps to reach millimetre beliefs, and the
    // tactile latent drifts while the goal predictor is still flat.
    for (auto* net : {&m.camera_encoder, &m.tactile_encoder, &m.goal_predictor})
      for (std::size_t k = d; k < 2 * d; ++k) net->layers.back().bias.data[k] = std::log(hp.sigma_g);
    m.transition.sigma = hp.nvae_sigma;
    m.transition.mode = uses_trainable_abc(hp.variant) ? AbcMode::Trainable : AbcMode::Fixed;
    if (m.transition.mode == AbcMode::Trainable) {
      auto r6 = stream("transition");
      m.transition.f_a = nn::Mlp(widths(3 * d, hp.abc_hidden, d), r6, nn::Output::Linear, hp.leaky_slope);
      m.transition.f_b = nn::Mlp(widths(3 * d, hp.abc_hidden, d), r6, nn::Output::Linear, hp.leaky_slope);
      m.transition.f_c = nn::Mlp(widths(3 * d, hp.abc_hidden, d), r6, nn::Output::Linear, hp.leaky_slope);
    }
    return m;
  }

  // Parameters in declaration order (the checkpoint order).
  std::vector<std::pair<std::string, ad::Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, ad::Tensor*>> out;
    camera_encoder.collect("camera_encoder", out);
    camera_decoder.collect("camera_decoder", out);
    tactile_encoder.collect("tactile_encoder", out);
    tactile_decoder.collect("tactile_decoder", out);
    goal_predictor.collect("goal_predictor", out);
    if (transition.mode == AbcMode::Trainable) {
      transition.f_a.collect("transition.f_a", out);
      transition.f_b.collect("transition.f_b", out);
      transition.f_c.collect("transition.f_c", out);
    }
    return out;
  }

  std::vector<std::pair<std::string, const ad::Tensor*>> named_parameters() const {
    std::vector<std::pair<std::string, const ad::Tensor*>> out;
    for (auto& [n, t] : const_cast<ModelBundle*>(this)->named_parameters()) out.emplace_back(n, t);
    return out;
  }

  void zero_grad() {
    for (auto& [_, t] : named_parameters()) t->zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Tape-level building blocks. Image batches are [N, H*W*3] tensors.

inline ad::Tensor stack_images(std::span<const Image* const> images, std::size_t expected_pixels) {
  ad::Tensor t = ad::Tensor::zeros({images.size(), expected_pixels});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->size() != expected_pixels)
      throw ad::ShapeError("image " + std::to_string(i) + " has " + std::to_string(images[i]->size()) +
                           " values, model expects " + std::to_string(expected_pixels));
    std::copy(images[i]->data.begin(), images[i]->data.end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(i * expected_pixels));
  }
  return t;
}

inline GaussianVar split_gaussian(const ad::Var& head, std::size_t d) {
  return make_gaussian(ad::slice_cols(head, 0, d), ad::slice_cols(head, d, d));
}

inline GaussianVar encode_camera(ad::Tape& tape, const ModelBundle& m, const ad::Var& images) {
  const auto& hp = m.hp;
  if (images.shape().size() != 2 || images.shape()[1] != hp.camera_pixels())
    throw ad::ShapeError("encode_camera: expected [N," + std::to_string(hp.camera_pixels()) + "], got " +
                         ad::shape_str(images.shape()));
  ad::Var x = images;
  if (hp.camera_pool > 1) {
    const std::size_t n = images.shape()[0], s = hp.camera_size, k = hp.camera_pool;
    x = ad::reshape(ad::avg_pool2d(ad::reshape(x, {n, s, s, 3}), k), {n, (s / k) * (s / k) * 3});
  }
  return split_gaussian(m.camera_encoder.forward(tape, x), hp.latent_dim);
}

inline GaussianVar encode_tactile(ad::Tape& tape, const ModelBundle& m, const ad::Var& images) {
  if (images.shape().size() != 2 || images.shape()[1] != m.hp.tactile_pixels())
    throw ad::ShapeError("encode_tactile: expected [N," + std::to_string(m.hp.tactile_pixels()) + "], got " +
                         ad::shape_str(images.shape()));
  return split_gaussian(m.tactile_encoder.forward(tape, images), m.hp.latent_dim);
}

inline GaussianVar predict_goal(ad::Tape& tape, const ModelBundle& m, const ad::Var& z) {
  return split_gaussian(m.goal_predictor.forward(tape, z), m.hp.latent_dim);
}

inline ad::Var decode_camera(ad::Tape& tape, const ModelBundle& m, const ad::Var& x) {
  return m.camera_decoder.forward(tape, x);
}

inline ad::Var decode_tactile(ad::Tape& tape, const ModelBundle& m, const ad::Var& z) {
  return m.tactile_decoder.forward(tape, z);
}

// -log N(target | mean, I), summed: the unit-variance pixel likelihood.
inline ad::Var unit_gaussian_nll(const ad::Var& target, const ad::Var& mean) {
  const double n = static_cast<double>(target.size());
  return ad::add_scalar(ad::scale(ad::squared_distance(mean, target), 0.5), n * kHalfLog2Pi);
}

// N(x + dt u, sigma_x^2).
inline GaussianVar transition_prior(ad::Tape& tape, const ad::Var& x, const ad::Var& u, const HyperParams& hp) {
  return {ad::add(x, ad::scale(u, hp.dt)), tape.constant(ad::Tensor::filled(x.shape(), std::log(hp.sigma_x)))};
}

// v' = v + dt (A x + B v + C u), A/B/C diagonal.
inline ad::Var nvae_velocity_update(ad::Tape& tape, const ad::Var& x, const ad::Var& v, const ad::Var& u,
                                    const NvaeTransitionParams& p, double dt) {
  if (p.mode == AbcMode::Fixed) return ad::add(v, ad::scale(u, dt));
  const ad::Var in = ad::concat({x, v, u}, 1);
  const ad::Var a = p.f_a.forward(tape, in);
  const ad::Var b = ad::scale(ad::exp(p.f_b.forward(tape, in)), -1.0);
  const ad::Var c = ad::exp(p.f_c.forward(tape, in));
  const ad::Var accel = ad::add(ad::add(ad::mul(a, x), ad::mul(b, v)), ad::mul(c, u));
  return ad::add(v, ad::scale(accel, dt));
}

// Diagonal A, B, C evaluated at (x, v, u), one row per input row.
struct AbcValues {
  std::vector<double> a, b, c;
};

inline AbcValues nvae_abc(const NvaeTransitionParams& p, std::span<const double> x, std::span<const double> v,
                          std::span<const double> u) {
  const std::size_t d = x.size();
  if (p.mode == AbcMode::Fixed) return {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  ad::Tape tape;
  std::vector<double> in(x.begin(), x.end());
  in.insert(in.end(), v.begin(), v.end());
  in.insert(in.end(), u.begin(), u.end());
  const ad::Var iv = tape.constant(ad::Tensor::row(in));
  AbcValues out;
  out.a = p.f_a.forward(tape, iv).value().data;
  out.b = p.f_b.forward(tape, iv).value().data;
  out.c = p.f_c.forward(tape, iv).value().data;
  for (auto& b : out.b) b = -std::exp(b);
  for (auto& c : out.c) c = std::exp(c);
  return out;
}

// ---------------------------------------------------------------------------
// Objectives over a batch of episodes. Each episode owns its noise stream so
// the loss does not depend on the episode order inside the batch.

class Objective {
 public:
  Objective(ad::Tape& tape, const ModelBundle& m, std::vector<const EpisodeRecord*> episodes, std::vector<Rng> rngs)
      : tape_(tape), m_(m), eps_(std::move(episodes)), rngs_(std::move(rngs)) {
    if (eps_.empty()) throw std::invalid_argument("objective: empty batch");
    if (rngs_.size() != eps_.size()) throw std::invalid_argument("objective: one noise stream per episode required");
    horizon_ = eps_.front()->horizon();
    for (auto* e : eps_)
      if (e->horizon() != horizon_) throw std::invalid_argument("objective: episodes have differing horizons");
  }

  std::size_t batch() const { return eps_.size(); }

  // Mean over transitions of -log p(I_{t+1} | x_{t+1}) with x_{t+1} drawn from
  // the x_t + dt u prior, plus KL(q(x_{t+1} | I_{t+1}) || prior). Summed over
  // the batch.
  ad::Var lx() {
    if (horizon_ < 2) throw std::invalid_argument("loss_lx: episodes need at least 2 frames");
    const std::size_t d = m_.hp.latent_dim, steps = horizon_ - 1;
    const auto& q = camera_posterior();
    std::vector<std::size_t> cur, nxt;
    ad::Tensor u = ad::Tensor::zeros({batch() * steps, d});
    std::vector<const Image*> targets;
    for (std::size_t b = 0; b < batch(); ++b) {
      for (std::size_t t = 0; t < steps; ++t) {
        cur.push_back(b * horizon_ + t);
        nxt.push_back(b * horizon_ + t + 1);
        u.data[(b * steps + t) * d + 0] = eps_[b]->frames[t].action.x;
        u.data[(b * steps + t) * d + 1] = eps_[b]->frames[t].action.y;
        targets.push_back(&eps_[b]->frames[t + 1].camera);
      }
    }
    const GaussianVar q_cur{ad::gather_rows(q.mean, cur), ad::gather_rows(q.log_std, cur)};
    const GaussianVar q_nxt{ad::gather_rows(q.mean, nxt), ad::gather_rows(q.log_std, nxt)};
    const ad::Var x_t = sample_rows(q_cur, steps);
    const GaussianVar prior = transition_prior(tape_, x_t, tape_.constant(std::move(u)), m_.hp);
    const ad::Var x_next = sample_rows(prior, steps);
    const ad::Var recon = decode_camera(tape_, m_, x_next);
    const ad::Var target = tape_.constant(stack_images(targets, m_.hp.camera_pixels()));
    const ad::Var total = ad::add(unit_gaussian_nll(target, recon), diag_gaussian_kl(q_nxt, prior));
    return ad::scale(total, 1.0 / static_cast<double>(steps));
  }

  // -log p(I_z | z) - log p(I_g | x_g) + KL(q(x_g | I_g) || p(x_g | z)), with
  // z ~ q(z | I_z) and x_g ~ p(x_g | z). Summed over the batch.
  ad::Var lz() {
    const ad::Var z = tactile_sample();
    const ad::Var tactile_recon = decode_tactile(tape_, m_, z);
    std::vector<const Image*> tac, goal;
    for (auto* e : eps_) {
      tac.push_back(&e->tactile);
      goal.push_back(&e->goal);
    }
    const ad::Var tactile_target = tape_.constant(stack_images(tac, m_.hp.tactile_pixels()));
    const GaussianVar& pg = goal_prior();
    const ad::Var xg = sample_rows(pg, 1);
    const ad::Var goal_recon = decode_camera(tape_, m_, xg);
    const ad::Var goal_target = tape_.constant(stack_images(goal, m_.hp.camera_pixels()));
    return ad::add(ad::add(unit_gaussian_nll(tactile_target, tactile_recon), unit_gaussian_nll(goal_target, goal_recon)),
                   goal_kl());
  }

  // KL(q(x_g | I_g) || p(x_g | z)) alone.
  ad::Var goal_kl() { return diag_gaussian_kl(goal_posterior(), goal_prior()); }

  // KL(q(x_g | I_g) || N(0, sigma_g^2)) + KL(p(x_g | z) || N(0, sigma_g^2)).
  ad::Var additional_kl() {
    const GaussianVar& qg = goal_posterior();
    const GaussianVar& pg = goal_prior();
    const GaussianVar ref = constant_gaussian(tape_, qg.mean.shape(), 0.0, m_.hp.sigma_g);
    return ad::add(diag_gaussian_kl(qg, ref), diag_gaussian_kl(pg, ref));
  }

  // Double-integrator ELBO with accelerations recovered by differencing the
  // recorded velocities, plus KL(q(x | I) || N(0, I)) averaged over frames.
  ad::Var nvae_elbo() {
    if (horizon_ < 3) throw std::invalid_argument("nvae_elbo: episodes need at least 3 frames");
    const std::size_t d = m_.hp.latent_dim, steps = horizon_ - 2;
    const double dt = m_.hp.dt;
    const auto& q = camera_posterior();
    const ad::Var x_all = sample_rows(q, horizon_);
    std::vector<std::size_t> prev, cur, nxt;
    ad::Tensor accel = ad::Tensor::zeros({batch() * steps, d});
    std::vector<const Image*> targets;
    for (std::size_t b = 0; b < batch(); ++b) {
      const auto& fr = eps_[b]->frames;
      for (std::size_t t = 1; t + 1 < horizon_; ++t) {
        prev.push_back(b * horizon_ + t - 1);
        cur.push_back(b * horizon_ + t);
        nxt.push_back(b * horizon_ + t + 1);
        const std::size_t row = b * steps + t - 1;
        accel.data[row * d + 0] = (fr[t].action.x - fr[t - 1].action.x) / dt;
        accel.data[row * d + 1] = (fr[t].action.y - fr[t - 1].action.y) / dt;
        targets.push_back(&fr[t + 1].camera);
      }
    }
    const ad::Var x_prev = ad::gather_rows(x_all, prev);
    const ad::Var x_cur = ad::gather_rows(x_all, cur);
    const ad::Var v = ad::scale(ad::sub(x_cur, x_prev), 1.0 / dt);
    const ad::Var v_next = nvae_velocity_update(tape_, x_cur, v, tape_.constant(std::move(accel)), m_.transition, dt);
    const GaussianVar prior{ad::add(x_cur, ad::scale(v_next, dt)),
                            tape_.constant(ad::Tensor::filled(x_cur.shape(), std::log(m_.transition.sigma)))};
    const GaussianVar q_nxt{ad::gather_rows(q.mean, nxt), ad::gather_rows(q.log_std, nxt)};
    const ad::Var x_next = sample_rows(prior, steps);
    const ad::Var recon = decode_camera(tape_, m_, x_next);
    const ad::Var target = tape_.constant(stack_images(targets, m_.hp.camera_pixels()));
    const ad::Var elbo =
        ad::scale(ad::add(unit_gaussian_nll(target, recon), diag_gaussian_kl(q_nxt, prior)), 1.0 / static_cast<double>(steps));
    const GaussianVar unit = constant_gaussian(tape_, q.mean.shape(), 0.0, 1.0);
    const ad::Var reg = ad::scale(diag_gaussian_kl(q, unit), 1.0 / static_cast<double>(horizon_));
    return ad::add(elbo, reg);
  }

  // Variant objective, averaged over the batch.
  ad::Var total(Variant v) {
    ad::Var sum_loss;
    if (uses_simplified_prior(v)) {
      sum_loss = lx();
    } else {
      sum_loss = nvae_elbo();
    }
    if (uses_tactile(v)) sum_loss = ad::add(sum_loss, lz());
    if (uses_additional_kl(v)) sum_loss = ad::add(sum_loss, additional_kl());
    return ad::scale(sum_loss, 1.0 / static_cast<double>(batch()));
  }

  const GaussianVar& camera_posterior() {
    if (!q_) {
      std::vector<const Image*> imgs;
      for (auto* e : eps_)
        for (const auto& f : e->frames) imgs.push_back(&f.camera);
      q_ = encode_camera(tape_, m_, tape_.constant(stack_images(imgs, m_.hp.camera_pixels())));
    }
    return *q_;
  }

  // q(x_g | I_g); the goal image is frame 0, so this reuses the camera posterior.
  const GaussianVar& goal_posterior() {
    if (!qg_) {
      std::vector<std::size_t> first;
      for (std::size_t b = 0; b < batch(); ++b) first.push_back(b * horizon_);
      for (auto* e : eps_)
        if (!(e->frames.front().camera == e->goal))
          throw std::invalid_argument("objective: frame 0 must be the goal image");
      const auto& q = camera_posterior();
      qg_ = GaussianVar{ad::gather_rows(q.mean, first), ad::gather_rows(q.log_std, first)};
    }
    return *qg_;
  }

  const GaussianVar& tactile_posterior() {
    if (!qz_) {
      std::vector<const Image*> tac;
      for (auto* e : eps_) tac.push_back(&e->tactile);
      qz_ = encode_tactile(tape_, m_, tape_.constant(stack_images(tac, m_.hp.tactile_pixels())));
    }
    return *qz_;
  }

  ad::Var tactile_sample() {
    if (!z_) z_ = sample_rows(tactile_posterior(), 1);
    return *z_;
  }

  const GaussianVar& goal_prior() {
    if (!pg_) pg_ = predict_goal(tape_, m_, tactile_sample());
    return *pg_;
  }

  // Overrides p(x_g | z) (test hook).
  void set_goal_prior(GaussianVar g) { pg_ = std::move(g); }

 private:
  // Reparameterized sample; rows come in per-episode blocks of `rows_per_episode`.
  ad::Var sample_rows(const GaussianVar& g, std::size_t rows_per_episode) {
    std::normal_distribution<double> n01(0.0, 1.0);
    ad::Tensor eps = ad::Tensor::zeros(g.mean.shape());
    const std::size_t d = g.mean.shape()[1];
    for (std::size_t b = 0; b < batch(); ++b)
      for (std::size_t k = 0; k < rows_per_episode * d; ++k) eps.data[b * rows_per_episode * d + k] = n01(rngs_[b]);
    return ad::add(g.mean, ad::mul(ad::exp(g.log_std), tape_.constant(std::move(eps))));
  }

  ad::Tape& tape_;
  const ModelBundle& m_;
  std::vector<const EpisodeRecord*> eps_;
  std::vector<Rng> rngs_;
  std::size_t horizon_ = 0;
  std::optional<GaussianVar> q_, qg_, qz_, pg_;
  std::optional<ad::Var> z_;
};

// Single-episode conveniences. Each builds its own tape and returns the
// scalar value; gradients accumulate into the bundle when `backprop` is set.
namespace detail {
template <class F>
double run_objective(const ModelBundle& m, const EpisodeRecord& ep, Rng& rng, bool backprop, F f) {
  ad::Tape tape;
  Objective obj(tape, m, {&ep}, {Rng(rng())});
  const ad::Var loss = f(obj);
  if (backprop) tape.backward(loss);
  return loss.value().item();
}
}  // namespace detail

inline double loss_lx(const ModelBundle& m, const EpisodeRecord& ep, Rng& rng, bool backprop = false) {
  return detail::run_objective(m, ep, rng, backprop, [](Objective& o) { return o.lx(); });
}

inline double loss_lz(const ModelBundle& m, const EpisodeRecord& ep, Rng& rng, bool backprop = false) {
  return detail::run_objective(m, ep, rng, backprop, [](Objective& o) { return o.lz(); });
}

inline double loss_additional_kl(const ModelBundle& m, const EpisodeRecord& ep, Rng& rng, bool backprop = false) {
  return detail::run_objective(m, ep, rng, backprop, [](Objective& o) { return o.additional_kl(); });
}

inline double nvae_elbo(const ModelBundle& m, const EpisodeRecord& ep, Rng& rng, bool backprop = false) {
  return detail::run_objective(m, ep, rng, backprop, [](Objective& o) { return o.nvae_elbo(); });
}

// ---------------------------------------------------------------------------
// Value-level inference.

inline std::vector<DiagGaussian> to_beliefs(const GaussianVar& g) {
  const auto& mu = g.mean.value();
  const auto& ls = g.log_std.value();
  const std::size_t n = mu.shape[0], d = mu.shape[1];
  std::vector<DiagGaussian> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.emplace_back(std::vector<double>(mu.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                                         mu.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)),
                     std::vector<double>(ls.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                                         ls.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
  return out;
}

inline std::vector<DiagGaussian> encode_camera(const ModelBundle& m, std::span<const Image* const> images) {
  if (images.empty()) return {};
  ad::Tape tape;
  return to_beliefs(encode_camera(tape, m, tape.constant(stack_images(images, m.hp.camera_pixels()))));
}

inline DiagGaussian encode_camera(const ModelBundle& m, const Image& img) {
  const Image* p = &img;
  return encode_camera(m, std::span<const Image* const>(&p, 1)).front();
}

inline std::vector<DiagGaussian> encode_tactile(const ModelBundle& m, std::span<const Image* const> images) {
  if (images.empty()) return {};
  ad::Tape tape;
  return to_beliefs(encode_tactile(tape, m, tape.constant(stack_images(images, m.hp.tactile_pixels()))));
}

inline DiagGaussian encode_tactile(const ModelBundle& m, const Image& img) {
  const Image* p = &img;
  return encode_tactile(m, std::span<const Image* const>(&p, 1)).front();
}

inline DiagGaussian predict_goal(const ModelBundle& m, std::span<const double> z) {
  if (z.size() != m.hp.latent_dim)
    throw ad::ShapeError("predict_goal: z has " + std::to_string(z.size()) + " entries, expected " +
                         std::to_string(m.hp.latent_dim));
  ad::Tape tape;
  return to_beliefs(predict_goal(tape, m, tape.constant(ad::Tensor::row({z.begin(), z.end()})))).front();
}

inline std::vector<double> decode_camera(const ModelBundle& m, std::span<const double> x) {
  ad::Tape tape;
  return decode_camera(tape, m, tape.constant(ad::Tensor::row({x.begin(), x.end()}))).value().data;
}

inline std::vector<double> decode_tactile(const ModelBundle& m, std::span<const double> z) {
  ad::Tape tape;
  return decode_tactile(tape, m, tape.constant(ad::Tensor::row({z.begin(), z.end()}))).value().data;
}

inline DiagGaussian transition_prior(std::span<const double> x, std::span<const double> u, const HyperParams& hp) {
  if (x.size() != u.size()) throw ad::ShapeError("transition_prior: x and u differ in dimension");
  std::vector<double> mean(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mean[i] = x[i] + hp.dt * u[i];
  return DiagGaussian::isotropic(std::move(mean), hp.sigma_x);
}

inline std::vector<double> nvae_velocity_update(std::span<const double> x, std::span<const double> v,
                                                std::span<const double> u, const NvaeTransitionParams& p, double dt) {
  const AbcValues abc = nvae_abc(p, x, v, u);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + dt * (abc.a[i] * x[i] + abc.b[i] * v[i] + abc.c[i] * u[i]);
  return out;
}

}  // namespace tsnvae
