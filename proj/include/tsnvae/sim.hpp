#pragma once

// Planar connector-insertion rig: an end effector moving in XY above a fixed
// socket, holding a plug with a random in-hand offset. Renders a wrist camera
// view and a GelSight-style tactile view.

#include "tsnvae/io.hpp"
#include "tsnvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnvae {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
  double norm() const { return std::hypot(x, y); }
};

struct SimConfig {
  double dt_collect = 0.5;              // s
  double workspace_half_width = 0.05;   // m, around the socket
  double process_noise_std = 1e-4;      // m per dt_collect
  std::size_t camera_size = 32;         // px
  std::size_t tactile_size = 24;        // px
  double action_limit = 0.01;           // m/s per axis
  double goal_warp_coeff = 0.1;
  double grasp_range = 0.003;           // m per axis
  double tilt_gain = 20.0;              // rad per m of grasp offset
  Vec2 socket_pos{};
  double camera_px_per_m = 280.0;
  double tactile_px_per_m = 2400.0;
  bool tactile_lighting = true;         // lighting gradient and lens distortion
  std::uint64_t seed = 0;
};

struct WorldState {
  Vec2 ee_pos;
  Vec2 grasp_offset;
  double tilt = 0.0;
  Vec2 socket_pos;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

// H x W x C image, channels last, values on the 8-bit grid k/255.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3) : height(h), width(w), channels(c), data(h * w * c, 0.0) {}

  double& at(std::size_t r, std::size_t col, std::size_t ch) { return data[(r * width + col) * channels + ch]; }
  double at(std::size_t r, std::size_t col, std::size_t ch) const { return data[(r * width + col) * channels + ch]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Image&, const Image&) = default;
};

inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

inline void write_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3) throw std::invalid_argument("write_ppm: only 3-channel images are supported");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.data) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  is >> magic >> w >> h >> maxv;
  if (magic != "P6" || maxv != 255) throw std::runtime_error("read_ppm: " + path + " is not an 8-bit P6 file");
  is.get();
  Image img(h, w, 3);
  for (auto& v : img.data) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("read_ppm: " + path + " is truncated");
    v = static_cast<double>(c) / 255.0;
  }
  return img;
}

class Env {
 public:
  explicit Env(SimConfig cfg = {}) : cfg_(cfg), rng_(make_rng(cfg.seed)) {}

  const SimConfig& config() const { return cfg_; }
  std::size_t clamp_warnings() const { return clamp_warnings_; }

  // Fresh grasp; the arm starts pulled out directly above the socket.
  WorldState reset(std::uint64_t seed) {
    rng_ = make_rng(derive_seed(seed, "env-noise"));
    Rng grasp = make_rng(derive_seed(seed, "grasp"));
    std::uniform_real_distribution<double> off(-cfg_.grasp_range, cfg_.grasp_range);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    WorldState s;
    s.socket_pos = cfg_.socket_pos;
    s.grasp_offset = {off(grasp), off(grasp)};
    s.tilt = cfg_.tilt_gain * s.grasp_offset.norm() * sym(grasp);
    s.ee_pos = insertion_position(s);
    return s;
  }

  // ee' = clip(ee + dt u + eps). Noise std scales with sqrt(dt / dt_collect).
  WorldState step(const WorldState& s, Vec2 u, double dt) {
    const double lim = cfg_.action_limit;
    if (std::abs(u.x) > lim || std::abs(u.y) > lim) {
      ++clamp_warnings_;
      u = {std::clamp(u.x, -lim, lim), std::clamp(u.y, -lim, lim)};
    }
    WorldState n = s;
    Vec2 eps{};
    if (cfg_.process_noise_std > 0.0) {
      std::normal_distribution<double> g(0.0, cfg_.process_noise_std * std::sqrt(dt / cfg_.dt_collect));
      eps = {g(rng_), g(rng_)};
    }
    n.ee_pos = s.ee_pos + dt * u + eps;
    const double hw = cfg_.workspace_half_width;
    n.ee_pos.x = std::clamp(n.ee_pos.x, s.socket_pos.x - hw, s.socket_pos.x + hw);
    n.ee_pos.y = std::clamp(n.ee_pos.y, s.socket_pos.y - hw, s.socket_pos.y + hw);
    return n;
  }

  // Displacement of the plug tip from the gripper axis: grasp offset plus the
  // tilt-induced bilinear term.
  Vec2 plug_tip(const WorldState& s) const {
    const Vec2 warp{s.grasp_offset.x * s.tilt, s.grasp_offset.y * s.tilt};
    return s.grasp_offset + cfg_.goal_warp_coeff * warp;
  }

  Vec2 insertion_position(const WorldState& s) const { return s.socket_pos - plug_tip(s); }

  bool is_success(const WorldState& s, double tol = 1e-3) const {
    if (!(tol > 0.0)) throw std::invalid_argument("is_success: tolerance must be positive");
    return (s.ee_pos - insertion_position(s)).norm() <= tol;
  }

  // Pixel position (column, row) of a camera-frame displacement; +Y is up.
  std::pair<double, double> camera_pixel(Vec2 rel) const {
    const double c = (static_cast<double>(cfg_.camera_size) - 1.0) / 2.0;
    return {c + cfg_.camera_px_per_m * rel.x, c - cfg_.camera_px_per_m * rel.y};
  }

  Image render_camera(const WorldState& s) const {
    const std::size_t n = cfg_.camera_size;
    Image img(n, n, 3);
    const auto [su, sv] = camera_pixel(s.socket_pos - s.ee_pos);
    const auto [pu, pv] = camera_pixel(plug_tip(s));
    constexpr double kSocketColor[3] = {0.90, 0.60, 0.10};
    constexpr double kPlugColor[3] = {0.10, 0.30, 0.85};
    constexpr double kBackground[3] = {0.10, 0.10, 0.12};
    constexpr double kSocketRadius = 2.0, kPlugRadius = 1.2;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t col = 0; col < n; ++col) {
        const double u = static_cast<double>(col), v = static_cast<double>(r);
        const double gs = blob(u - su, v - sv, kSocketRadius);
        const double gp = blob(u - pu, v - pv, kPlugRadius);
        for (std::size_t ch = 0; ch < 3; ++ch)
          img.at(r, col, ch) = quantize8(kBackground[ch] + gs * kSocketColor[ch] + gp * kPlugColor[ch]);
      }
    }
    return img;
  }

  Image render_tactile(const WorldState& s) const {
    const std::size_t n = cfg_.tactile_size;
    Image img(n, n, 3);
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    const double half = static_cast<double>(n) / 2.0;
    const double gu = cfg_.tactile_px_per_m * s.grasp_offset.x;
    const double gv = -cfg_.tactile_px_per_m * s.grasp_offset.y;
    constexpr double kLong = 3.0, kShort = 1.5;    // contact patch semi-axes, px
    constexpr double kShearPerRad = 6.0;
    constexpr double kDistortion = 0.25;
    const bool lit = cfg_.tactile_lighting;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t col = 0; col < n; ++col) {
        double u = static_cast<double>(col) - c, v = static_cast<double>(r) - c;
        const double ru = u / half, rv = v / half, rr = ru * ru + rv * rv;
        if (lit) {  // sample the undistorted surface
          const double f = 1.0 + kDistortion * rr;
          u /= f;
          v /= f;
        }
        double du = u - gu, dv = v - gv;
        du -= kShearPerRad * s.tilt * dv;
        const double contact = std::exp(-0.5 * (du * du / (kLong * kLong) + dv * dv / (kShort * kShort)));
        double gain[3] = {0.8, 0.8, 0.8};
        double base[3] = {0.35, 0.35, 0.35};
        if (lit) {
          gain[0] = 0.45 + 0.55 * ru * ru;
          gain[1] = 0.45 + 0.55 * rv * rv;
          gain[2] = 0.95 - 0.45 * rr;
          base[0] = 0.25 + 0.20 * ru * ru;
          base[1] = 0.25 + 0.20 * rv * rv;
          base[2] = 0.40 - 0.15 * rr;
        }
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, col, ch) = quantize8(base[ch] + gain[ch] * 0.6 * contact);
      }
    }
    return img;
  }

 private:
  static double blob(double du, double dv, double radius) {
    return std::exp(-(du * du + dv * dv) / (2.0 * radius * radius));
  }

  SimConfig cfg_;
  Rng rng_;
  std::size_t clamp_warnings_ = 0;
};

inline void to_json(nlohmann::json& j, const Vec2& v) { j = nlohmann::json::array({v.x, v.y}); }
inline void from_json(const nlohmann::json& j, Vec2& v) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected a 2-element array for an XY vector");
  v = {j[0].get<double>(), j[1].get<double>()};
}

inline void to_json(nlohmann::json& j, const SimConfig& c) {
  j = {{"dt_collect", c.dt_collect},
       {"workspace_half_width", c.workspace_half_width},
       {"process_noise_std", c.process_noise_std},
       {"camera_size", c.camera_size},
       {"tactile_size", c.tactile_size},
       {"action_limit", c.action_limit},
       {"goal_warp_coeff", c.goal_warp_coeff},
       {"grasp_range", c.grasp_range},
       {"tilt_gain", c.tilt_gain},
       {"socket_pos", c.socket_pos},
       {"camera_px_per_m", c.camera_px_per_m},
       {"tactile_px_per_m", c.tactile_px_per_m},
       {"tactile_lighting", c.tactile_lighting},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
  require_known_keys(j,
                     {"dt_collect", "workspace_half_width", "process_noise_std", "camera_size", "tactile_size",
                      "action_limit", "goal_warp_coeff", "grasp_range", "tilt_gain", "socket_pos", "camera_px_per_m",
                      "tactile_px_per_m", "tactile_lighting", "seed"},
                     "sim");
  read_if(j, "dt_collect", c.dt_collect);
  read_if(j, "workspace_half_width", c.workspace_half_width);
  read_if(j, "process_noise_std", c.process_noise_std);
  read_if(j, "camera_size", c.camera_size);
  read_if(j, "tactile_size", c.tactile_size);
  read_if(j, "action_limit", c.action_limit);
  read_if(j, "goal_warp_coeff", c.goal_warp_coeff);
  read_if(j, "grasp_range", c.grasp_range);
  read_if(j, "tilt_gain", c.tilt_gain);
  read_if(j, "socket_pos", c.socket_pos);
  read_if(j, "camera_px_per_m", c.camera_px_per_m);
  read_if(j, "tactile_px_per_m", c.tactile_px_per_m);
  read_if(j, "tactile_lighting", c.tactile_lighting);
  read_if(j, "seed", c.seed);
}

}  // namespace tsnvae
