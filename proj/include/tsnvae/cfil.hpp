#pragma once

// Regression baselines: two-stage (coarse, fine) goal regression from the
// camera, grasp estimation by tactile regression or template matching, and
// open-loop positioning with transform-based grasp compensation.

#include "tsnvae/adam.hpp"
#include "tsnvae/controller.hpp"
#include "tsnvae/dataset.hpp"
#include "tsnvae/io.hpp"
#include "tsnvae/nn.hpp"
#include "tsnvae/report.hpp"
#include "tsnvae/rng.hpp"
#include "tsnvae/sim.hpp"
#include "tsnvae/transform2d.hpp"
#include "tsnvae/train.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnvae {

struct CfilConfig {
  double crop_fraction = 0.5;      // side of the fine-stage centre crop, relative to the camera image
  double template_fraction = 0.25; // side of the tactile template, relative to the tactile image
  int search_radius_px = 8;
  std::size_t train_steps = 3000;
  std::size_t batch = 32;
  double lr = 3e-4;
  double target_scale = 0.01;      // m; regression targets are divided by this
  std::vector<std::size_t> hidden{64, 32};
  Vec2 mount_error{};              // perturbation of the sensor mounting constant, m
};

inline void to_json(nlohmann::json& j, const CfilConfig& c) {
  j = {{"crop_fraction", c.crop_fraction}, {"template_fraction", c.template_fraction},
       {"search_radius_px", c.search_radius_px}, {"train_steps", c.train_steps},
       {"batch", c.batch}, {"lr", c.lr}, {"target_scale", c.target_scale},
       {"hidden", c.hidden}, {"mount_error", c.mount_error}};
}

inline void from_json(const nlohmann::json& j, CfilConfig& c) {
  require_known_keys(j,
                     {"crop_fraction", "template_fraction", "search_radius_px", "train_steps", "batch", "lr",
                      "target_scale", "hidden", "mount_error"},
                     "cfil");
  read_if(j, "crop_fraction", c.crop_fraction);
  read_if(j, "template_fraction", c.template_fraction);
  read_if(j, "search_radius_px", c.search_radius_px);
  read_if(j, "train_steps", c.train_steps);
  read_if(j, "batch", c.batch);
  read_if(j, "lr", c.lr);
  read_if(j, "target_scale", c.target_scale);
  read_if(j, "hidden", c.hidden);
  if (j.contains("mount_error")) c.mount_error = j.at("mount_error").get<Vec2>();
}

enum class CfilMethod { Plain, Template, TactileCnn };

inline std::string_view cfil_tag(CfilMethod m) {
  switch (m) {
    case CfilMethod::Plain: return "CFIL";
    case CfilMethod::Template: return "CFIL+Template";
    case CfilMethod::TactileCnn: return "CFIL+TactileCNN";
  }
  return "?";
}

struct CfilParams {
  CfilConfig cfg;
  nn::Mlp coarse;   // pooled full image -> (socket - ee) / scale
  nn::Mlp fine;     // centre crop -> residual of the coarse estimate
  nn::Mlp tactile;  // tactile image -> grasp offset / scale
  std::vector<double> coarse_losses, fine_losses, tactile_losses;
};

// --- feature extraction -----------------------------------------------------

// 2x2 average pool of the full camera image, flattened.
inline std::vector<double> coarse_features(const Image& img) {
  const std::size_t h = img.height / 2, w = img.width / 2, c = img.channels;
  std::vector<double> out(h * w * c);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(r * w + q) * c + ch] = 0.25 * (img.at(2 * r, 2 * q, ch) + img.at(2 * r + 1, 2 * q, ch) +
                                            img.at(2 * r, 2 * q + 1, ch) + img.at(2 * r + 1, 2 * q + 1, ch));
  return out;
}

inline std::size_t crop_side(std::size_t size, double fraction) {
  const auto s = static_cast<std::size_t>(std::lround(static_cast<double>(size) * fraction));
  if (s == 0 || s > size) throw ConfigError("crop fraction " + std::to_string(fraction) + " is out of range");
  return s;
}

inline std::vector<double> fine_features(const Image& img, double fraction) {
  const std::size_t s = crop_side(img.height, fraction), r0 = (img.height - s) / 2, c0 = (img.width - s) / 2;
  std::vector<double> out;
  out.reserve(s * s * img.channels);
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t q = 0; q < s; ++q)
      for (std::size_t ch = 0; ch < img.channels; ++ch) out.push_back(img.at(r0 + r, c0 + q, ch));
  return out;
}

// --- regression -------------------------------------------------------------

// Mean over entries of (net(x) - y)^2.
inline ad::Var regression_loss(ad::Tape& tape, const nn::Mlp& net, const ad::Tensor& x, const ad::Tensor& y) {
  const ad::Var pred = net.forward(tape, tape.constant(x));
  if (pred.shape() != y.shape)
    throw ad::ShapeError("regression_loss: prediction " + ad::shape_str(pred.shape()) + " vs target " +
                         ad::shape_str(y.shape));
  return ad::scale(ad::squared_distance(pred, tape.constant(y)), 1.0 / static_cast<double>(y.size()));
}

inline double regression_loss(const nn::Mlp& net, const ad::Tensor& x, const ad::Tensor& y, bool backprop = false) {
  ad::Tape tape;
  const ad::Var l = regression_loss(tape, net, x, y);
  if (backprop) tape.backward(l);
  return l.value().item();
}

inline ad::Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("rows_to_tensor: no rows");
  ad::Tensor t = ad::Tensor::zeros({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * t.shape[1]));
  return t;
}

inline std::vector<double> predict_rows(const nn::Mlp& net, const ad::Tensor& x) {
  ad::Tape tape;
  return net.forward(tape, tape.constant(x)).value().data;
}

// Mini-batch Adam on squared error; returns the full-data loss every step.
inline std::vector<double> fit_regressor(nn::Mlp& net, const ad::Tensor& x, const ad::Tensor& y, const CfilConfig& cfg,
                                         Rng& rng) {
  const std::size_t n = x.shape[0], in = x.shape[1], out = y.shape[1];
  AdamState adam;
  adam.config.lr = cfg.lr;
  std::vector<std::reference_wrapper<ad::Tensor>> params;
  std::vector<std::pair<std::string, ad::Tensor*>> named;
  net.collect("net", named);
  for (auto& [_, t] : named) params.emplace_back(*t);
  std::vector<double> losses;
  losses.push_back(regression_loss(net, x, y));
  for (std::size_t step = 0; step < cfg.train_steps; ++step) {
    const auto idx = draw_batch(n, cfg.batch, rng);
    ad::Tensor bx = ad::Tensor::zeros({idx.size(), in}), by = ad::Tensor::zeros({idx.size(), out});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * in), in, bx.data.begin() + static_cast<std::ptrdiff_t>(i * in));
      std::copy_n(y.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * out), out, by.data.begin() + static_cast<std::ptrdiff_t>(i * out));
    }
    for (auto& [_, t] : named) t->zero_grad();
    const double l = regression_loss(net, bx, by, true);
    if (!std::isfinite(l)) throw TrainingError(step, "regression loss is not finite");
    adam_step(params, adam);
    losses.push_back(regression_loss(net, x, y));
  }
  return losses;
}

inline nn::Mlp make_regressor(std::size_t in, const CfilConfig& cfg, Rng& rng) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
  w.push_back(2);
  return nn::Mlp(w, rng);
}

// Supervised on the truth block: camera frames -> socket - ee, tactile -> grasp offset.
inline CfilParams train_cfil(const std::vector<EpisodeRecord>& data, const SimConfig& sim, const CfilConfig& cfg,
                             std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("train_cfil: dataset is empty");
  CfilParams p;
  p.cfg = cfg;
  std::vector<std::vector<double>> xc, xf, yc, xt, yt;
  for (const auto& e : data) {
    for (std::size_t t = 0; t < e.frames.size(); ++t) {
      const Vec2 rel = sim.socket_pos - e.truth.ee_pos[t];
      xc.push_back(coarse_features(e.frames[t].camera));
      xf.push_back(fine_features(e.frames[t].camera, cfg.crop_fraction));
      yc.push_back({rel.x / cfg.target_scale, rel.y / cfg.target_scale});
    }
    xt.push_back(e.tactile.data);
    yt.push_back({e.truth.grasp_offset.x / cfg.target_scale, e.truth.grasp_offset.y / cfg.target_scale});
  }
  const ad::Tensor Xc = rows_to_tensor(xc), Xf = rows_to_tensor(xf), Yc = rows_to_tensor(yc);
  const ad::Tensor Xt = rows_to_tensor(xt), Yt = rows_to_tensor(yt);

  Rng init = make_rng(derive_seed(seed, "cfil-init"));
  p.coarse = make_regressor(Xc.shape[1], cfg, init);
  p.fine = make_regressor(Xf.shape[1], cfg, init);
  p.tactile = make_regressor(Xt.shape[1], cfg, init);

  Rng r1 = make_rng(derive_seed(seed, "cfil-coarse"));
  p.coarse_losses = fit_regressor(p.coarse, Xc, Yc, cfg, r1);
  ad::Tensor residual = Yc;
  const auto coarse_pred = predict_rows(p.coarse, Xc);
  for (std::size_t i = 0; i < residual.size(); ++i) residual.data[i] -= coarse_pred[i];
  Rng r2 = make_rng(derive_seed(seed, "cfil-fine"));
  p.fine_losses = fit_regressor(p.fine, Xf, residual, cfg, r2);
  Rng r3 = make_rng(derive_seed(seed, "cfil-tactile"));
  p.tactile_losses = fit_regressor(p.tactile, Xt, Yt, cfg, r3);
  return p;
}

// socket - ee estimated from one camera frame.
inline Vec2 regress_relative(const CfilParams& p, const Image& camera, bool use_fine = true) {
  const auto c = predict_rows(p.coarse, ad::Tensor::row(coarse_features(camera)));
  Vec2 r{c[0], c[1]};
  if (use_fine) {
    const auto f = predict_rows(p.fine, ad::Tensor::row(fine_features(camera, p.cfg.crop_fraction)));
    r = r + Vec2{f[0], f[1]};
  }
  return p.cfg.target_scale * r;
}

inline Vec2 regress_grasp(const CfilParams& p, const Image& tactile) {
  const auto g = predict_rows(p.tactile, ad::Tensor::row(tactile.data));
  return p.cfg.target_scale * Vec2{g[0], g[1]};
}

// --- template matching --------------------------------------------------------

class NoMatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TemplateMatch {
  int du = 0, dv = 0;  // pixel shift of the best window from the template's home position
  double score = -2.0;
};

// Centre crop of a reference tactile image.
inline Image make_template(const Image& reference, double fraction) {
  const std::size_t s = crop_side(reference.height, fraction);
  const std::size_t r0 = (reference.height - s) / 2, c0 = (reference.width - s) / 2;
  Image t(s, s, reference.channels);
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t q = 0; q < s; ++q)
      for (std::size_t ch = 0; ch < reference.channels; ++ch) t.at(r, q, ch) = reference.at(r0 + r, c0 + q, ch);
  return t;
}

// Normalized cross-correlation of the template against the window of `img`
// whose top-left corner is (r0, c0); NaN when either patch is flat.
inline double ncc_at(const Image& img, const Image& tpl, std::size_t r0, std::size_t c0) {
  const std::size_t h = tpl.height, w = tpl.width, c = tpl.channels;
  const double n = static_cast<double>(h * w * c);
  double sa = 0.0, sb = 0.0;
  // Flatness is decided exactly: the centred sums of a constant patch keep
  // rounding residue from the mean.
  const double a0 = tpl.at(0, 0, 0), b0 = img.at(r0, c0, 0);
  bool flat_a = true, flat_b = true;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q)
      for (std::size_t ch = 0; ch < c; ++ch) {
        sa += tpl.at(r, q, ch);
        sb += img.at(r0 + r, c0 + q, ch);
        flat_a = flat_a && tpl.at(r, q, ch) == a0;
        flat_b = flat_b && img.at(r0 + r, c0 + q, ch) == b0;
      }
  if (flat_a || flat_b) return std::numeric_limits<double>::quiet_NaN();
  const double ma = sa / n, mb = sb / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = tpl.at(r, q, ch) - ma, b = img.at(r0 + r, c0 + q, ch) - mb;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
      }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

// Exhaustive search over integer shifts within +-radius; first maximum in
// row-major scan order wins ties.
inline TemplateMatch template_match(const Image& img, const Image& tpl, int radius) {
  if (tpl.channels != img.channels || tpl.height > img.height || tpl.width > img.width)
    throw ad::ShapeError("template_match: template does not fit the image");
  const int r_home = static_cast<int>((img.height - tpl.height) / 2), c_home = static_cast<int>((img.width - tpl.width) / 2);
  TemplateMatch best;
  bool found = false;
  for (int dv = -radius; dv <= radius; ++dv) {
    for (int du = -radius; du <= radius; ++du) {
      const int r0 = r_home + dv, c0 = c_home + du;
      if (r0 < 0 || c0 < 0 || r0 + static_cast<int>(tpl.height) > static_cast<int>(img.height) ||
          c0 + static_cast<int>(tpl.width) > static_cast<int>(img.width))
        continue;
      const double s = ncc_at(img, tpl, static_cast<std::size_t>(r0), static_cast<std::size_t>(c0));
      if (std::isnan(s)) continue;
      if (!found || s > best.score) {
        best = {du, dv, s};
        found = true;
      }
    }
  }
  if (!found) throw NoMatchError("template_match: no window with non-zero variance (flat image or template)");
  return best;
}

inline Image reference_tactile(const SimConfig& sim) {
  WorldState s;
  s.socket_pos = sim.socket_pos;
  s.ee_pos = s.socket_pos;
  return Env(sim).render_tactile(s);
}

// Grasp offset implied by a template shift (+v is down in the image).
inline Vec2 template_grasp(const Image& tactile, const Image& tpl, const SimConfig& sim, int radius) {
  const TemplateMatch m = template_match(tactile, tpl, radius);
  return {static_cast<double>(m.du) / sim.tactile_px_per_m, -static_cast<double>(m.dv) / sim.tactile_px_per_m};
}

// --- trials ----------------------------------------------------------------------

struct CfilTrial {
  Vec2 goal;           // commanded ee target
  Vec2 grasp_estimate;
  double final_error = 0.0;
};

// Regress the goal from the first camera frame, compensate for the grasp and
// drive there open-loop at constant velocity over the control window.
inline CfilTrial run_cfil_trial(const CfilParams& p, const SimConfig& sim, const ControllerConfig& ctrl,
                                CfilMethod method, std::uint64_t seed) {
  Env env(sim);
  WorldState s = trial_start(env, seed, ctrl.start_radius);
  CfilTrial out;
  CfilFrames f;
  f.gTm = Transform2D::translation(p.cfg.mount_error);
  f.mTo_expert = Transform2D::identity();
  f.bTg_cf = Transform2D::translation(s.ee_pos + regress_relative(p, env.render_camera(s)));
  Transform2D mTo = f.mTo_expert;
  if (method == CfilMethod::Template) {
    out.grasp_estimate = template_grasp(env.render_tactile(s), make_template(reference_tactile(sim), p.cfg.template_fraction),
                                        sim, p.cfg.search_radius_px);
    mTo = Transform2D::translation(out.grasp_estimate);
  } else if (method == CfilMethod::TactileCnn) {
    out.grasp_estimate = regress_grasp(p, env.render_tactile(s));
    mTo = Transform2D::translation(out.grasp_estimate);
  }
  out.goal = compensated_goal(f, mTo).t;
  const double dt = 1.0 / ctrl.control_hz;
  const auto ticks = static_cast<std::size_t>(std::llround(ctrl.max_duration * ctrl.control_hz));
  const Vec2 u = (1.0 / ctrl.max_duration) * (out.goal - s.ee_pos);
  for (std::size_t k = 0; k < ticks; ++k) s = env.step(s, u, dt);
  out.final_error = (s.ee_pos - env.insertion_position(s)).norm();
  return out;
}

inline BenchmarkRow run_cfil_trials(const CfilParams& p, const SimConfig& sim, const ControllerConfig& ctrl,
                                    CfilMethod method, std::size_t n_trials, std::uint64_t master) {
  if (n_trials == 0) throw std::invalid_argument("run_cfil_trials: n_trials must be at least 1");
  std::vector<double> errors;
  for (std::size_t i = 0; i < n_trials; ++i)
    errors.push_back(run_cfil_trial(p, sim, ctrl, method, trial_seed(master, i)).final_error);
  return summarize_trials(std::string(cfil_tag(method)), errors, ctrl.success_tol);
}

// Mean grasp-localization error of both estimators on an n x n offset grid
// spanning +-half_range per axis; tilt follows the simulator's grasp model.
struct LocalizationErrors {
  double template_mean = 0.0;
  double regressor_mean = 0.0;
};

inline LocalizationErrors grasp_localization_errors(const CfilParams& p, const SimConfig& sim, std::size_t n,
                                                    double half_range, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("grasp_localization_errors: grid needs at least 2 points per axis");
  const Env env(sim);
  const Image tpl = make_template(reference_tactile(sim), p.cfg.template_fraction);
  Rng rng = make_rng(derive_seed(seed, "offset-grid"));
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  LocalizationErrors e;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      WorldState s;
      s.socket_pos = sim.socket_pos;
      s.grasp_offset = {-half_range + 2.0 * half_range * static_cast<double>(j) / static_cast<double>(n - 1),
                        -half_range + 2.0 * half_range * static_cast<double>(i) / static_cast<double>(n - 1)};
      s.tilt = sim.tilt_gain * s.grasp_offset.norm() * sym(rng);
      s.ee_pos = env.insertion_position(s);
      const Image img = env.render_tactile(s);
      e.template_mean += (template_grasp(img, tpl, sim, p.cfg.search_radius_px) - s.grasp_offset).norm();
      e.regressor_mean += (regress_grasp(p, img) - s.grasp_offset).norm();
    }
  }
  e.template_mean /= static_cast<double>(n * n);
  e.regressor_mean /= static_cast<double>(n * n);
  return e;
}

}  // namespace tsnvae
