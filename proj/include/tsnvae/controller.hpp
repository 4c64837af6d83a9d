#pragma once

// Proportional positioning in latent space: u = alpha (x_g - x_t).

#include "tsnvae/io.hpp"
#include "tsnvae/model.hpp"
#include "tsnvae/report.hpp"
#include "tsnvae/rng.hpp"
#include "tsnvae/sim.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnvae {

struct ControllerConfig {
  double alpha = 1.0;          // 1/s
  double control_hz = 20.0;
  double max_duration = 5.0;   // s
  double success_tol = 1e-3;   // m
  double start_radius = 0.01;  // m, per-axis bound of the initial displacement from the goal
};

inline void to_json(nlohmann::json& j, const ControllerConfig& c) {
  j = {{"alpha", c.alpha},
       {"control_hz", c.control_hz},
       {"max_duration", c.max_duration},
       {"success_tol", c.success_tol},
       {"start_radius", c.start_radius}};
}

inline void from_json(const nlohmann::json& j, ControllerConfig& c) {
  require_known_keys(j, {"alpha", "control_hz", "max_duration", "success_tol", "start_radius"}, "controller");
  read_if(j, "alpha", c.alpha);
  read_if(j, "control_hz", c.control_hz);
  read_if(j, "max_duration", c.max_duration);
  read_if(j, "success_tol", c.success_tol);
  read_if(j, "start_radius", c.start_radius);
}

struct ControlStep {
  Vec2 ee_pos;                 // truth, for analysis only
  std::vector<double> latent;  // x_t
  Vec2 action;                 // commanded velocity after clamping
};

struct ControlTrace {
  std::vector<double> goal_latent;
  std::vector<ControlStep> steps;
  double initial_error = 0.0;
  double final_error = 0.0;
  bool success = false;
};

enum class ActionKind { Velocity, Acceleration };
enum class GoalSource { Tactile, ReferenceImage };

// What the controller sees of a model. The state argument exists only so
// tests can inject an oracle; bundle-backed seams ignore it.
struct LatentSeam {
  std::function<std::vector<double>(const WorldState&, const Image& camera)> locate;
  std::function<std::vector<double>(const WorldState&, const Image& tactile)> goal;
  ActionKind action = ActionKind::Velocity;
  NvaeTransitionParams transition;  // used for acceleration actions
};

// Camera view at the nominal insertion position with an ideal grasp.
inline Image reference_goal_image(const Env& env) {
  WorldState s;
  s.socket_pos = env.config().socket_pos;
  s.ee_pos = s.socket_pos;
  return env.render_camera(s);
}

inline LatentSeam bundle_seam(const ModelBundle& m, const Env& env) {
  LatentSeam seam;
  seam.locate = [&m](const WorldState&, const Image& img) { return encode_camera(m, img).mean; };
  if (uses_tactile(m.hp.variant)) {
    seam.goal = [&m](const WorldState&, const Image& tactile) {
      return predict_goal(m, encode_tactile(m, tactile).mean).mean;
    };
  } else {
    seam.goal = [&m, ref = reference_goal_image(env)](const WorldState&, const Image&) {
      return encode_camera(m, ref).mean;
    };
  }
  seam.action = uses_simplified_prior(m.hp.variant) ? ActionKind::Velocity : ActionKind::Acceleration;
  seam.transition = m.transition;
  return seam;
}

// Latent equals the true end-effector position.
inline LatentSeam oracle_seam(const Env& env) {
  LatentSeam seam;
  seam.locate = [](const WorldState& s, const Image&) { return std::vector<double>{s.ee_pos.x, s.ee_pos.y}; };
  seam.goal = [&env](const WorldState& s, const Image&) {
    const Vec2 g = env.insertion_position(s);
    return std::vector<double>{g.x, g.y};
  };
  return seam;
}

// Reset with a fresh grasp and displace the arm from its insertion position.
inline WorldState trial_start(Env& env, std::uint64_t seed, double start_radius) {
  WorldState s = env.reset(seed);
  Rng rng = make_rng(derive_seed(seed, "trial-start"));
  std::uniform_real_distribution<double> d(-start_radius, start_radius);
  s.ee_pos = s.ee_pos + Vec2{d(rng), d(rng)};
  return s;
}

inline ControlTrace run_episode(const LatentSeam& seam, Env& env, const ControllerConfig& cfg, WorldState s) {
  if (!(cfg.control_hz > 0.0)) throw std::invalid_argument("run_episode: control_hz must be positive");
  const double dt = 1.0 / cfg.control_hz;
  const auto ticks = static_cast<std::size_t>(std::llround(cfg.max_duration * cfg.control_hz));
  ControlTrace tr;
  tr.initial_error = (s.ee_pos - env.insertion_position(s)).norm();
  tr.goal_latent = seam.goal(s, env.render_tactile(s));
  const std::size_t d = tr.goal_latent.size();
  if (d != 2) throw std::runtime_error("run_episode: goal latent has dimension " + std::to_string(d));
  std::vector<double> prev;
  for (std::size_t k = 0; k < ticks; ++k) {
    const Image img = env.render_camera(s);
    std::vector<double> x = seam.locate(s, img);
    if (x.size() != d) throw std::runtime_error("run_episode: frame " + std::to_string(k) + " could not be encoded");
    std::vector<double> cmd(d);
    for (std::size_t i = 0; i < d; ++i) cmd[i] = cfg.alpha * (tr.goal_latent[i] - x[i]);
    if (seam.action == ActionKind::Acceleration) {
      std::vector<double> v(d, 0.0);
      if (!prev.empty())
        for (std::size_t i = 0; i < d; ++i) v[i] = (x[i] - prev[i]) / dt;
      cmd = nvae_velocity_update(x, v, cmd, seam.transition, dt);
    }
    const double lim = env.config().action_limit;
    const Vec2 u{std::clamp(cmd[0], -lim, lim), std::clamp(cmd[1], -lim, lim)};
    tr.steps.push_back({s.ee_pos, x, u});
    prev = std::move(x);
    s = env.step(s, u, dt);
  }
  tr.final_error = (s.ee_pos - env.insertion_position(s)).norm();
  tr.success = tr.final_error <= cfg.success_tol;
  return tr;
}

inline ControlTrace run_episode(const LatentSeam& seam, Env& env, const ControllerConfig& cfg, std::uint64_t seed) {
  return run_episode(seam, env, cfg, trial_start(env, seed, cfg.start_radius));
}

inline ControlTrace run_episode(const ModelBundle& m, Env& env, const ControllerConfig& cfg, std::uint64_t seed) {
  return run_episode(bundle_seam(m, env), env, cfg, seed);
}

inline std::uint64_t trial_seed(std::uint64_t master, std::size_t i) { return derive_seed(master, "trial", i); }

// Trial i uses the same seed (grasp and start pose) for every method.
inline BenchmarkRow run_trials(const std::string& method, const LatentSeam& seam, const SimConfig& sim,
                               const ControllerConfig& cfg, std::size_t n_trials, std::uint64_t master) {
  if (n_trials == 0) throw std::invalid_argument("run_trials: n_trials must be at least 1");
  Env env(sim);
  std::vector<double> errors;
  for (std::size_t i = 0; i < n_trials; ++i) errors.push_back(run_episode(seam, env, cfg, trial_seed(master, i)).final_error);
  return summarize_trials(method, errors, cfg.success_tol);
}

inline BenchmarkReport run_benchmark(const std::vector<const ModelBundle*>& bundles, const SimConfig& sim,
                                     const ControllerConfig& cfg, std::size_t n_trials, std::uint64_t master) {
  BenchmarkReport rep;
  Env env(sim);
  for (const auto* m : bundles)
    rep.rows.push_back(run_trials(std::string(variant_tag(m->hp.variant)), bundle_seam(*m, env), sim, cfg, n_trials, master));
  sort_rows(rep.rows);
  rep.config_fingerprint = std::to_string(fnv1a(nlohmann::json{{"sim", sim}, {"controller", cfg}}.dump()));
  return rep;
}

}  // namespace tsnvae
