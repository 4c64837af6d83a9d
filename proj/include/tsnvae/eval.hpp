#pragma once

// Latent-space diagnostics: signed axis assignment, per-axis correlation and
// slope against the true end-effector position, goal placement, SVG scatter.

#include "tsnvae/dataset.hpp"
#include "tsnvae/io.hpp"
#include "tsnvae/model.hpp"
#include "tsnvae/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsnvae {

// Pearson r; 0 when either side has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Least-squares fit y = slope * x + intercept.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("fit_line: bad input");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

using Latent2 = std::array<double, 2>;

// Physical axis k is read from latent dimension perm[k] multiplied by sign[k].
struct AxisAssignment {
  std::array<std::size_t, 2> perm{0, 1};
  std::array<int, 2> sign{1, 1};

  Latent2 apply(const Latent2& x) const { return {sign[0] * x[perm[0]], sign[1] * x[perm[1]]}; }
};

inline std::array<AxisAssignment, 8> all_assignments() {
  std::array<AxisAssignment, 8> out;
  std::size_t k = 0;
  for (std::array<std::size_t, 2> p : {std::array<std::size_t, 2>{0, 1}, std::array<std::size_t, 2>{1, 0}})
    for (int s0 : {1, -1})
      for (int s1 : {1, -1}) out[k++] = {p, {s0, s1}};
  return out;
}

struct AxisMetrics {
  AxisAssignment assignment;
  std::array<double, 2> r{};      // Pearson r of assigned latent vs truth, per physical axis
  std::array<double, 2> slope{};  // d(assigned latent) / d(truth)
  std::array<double, 2> intercept{};

  // Weakest axis correlation.
  double statistic() const { return std::min(std::abs(r[0]), std::abs(r[1])); }
};

// Searches the 8 signed assignments for the largest summed signed r, which
// is the largest sum of |r| with the signs that make each r positive. The
// first maximum in enumeration order wins.
inline AxisMetrics correlation_metrics(const std::vector<Latent2>& latents, const std::vector<Vec2>& truths) {
  if (latents.size() != truths.size()) throw std::invalid_argument("correlation_metrics: length mismatch");
  if (latents.size() < 3)
    throw std::invalid_argument("correlation_metrics: need at least 3 points, got " + std::to_string(latents.size()));
  std::array<std::vector<double>, 2> lat, tru;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    lat[0].push_back(latents[i][0]);
    lat[1].push_back(latents[i][1]);
    tru[0].push_back(truths[i].x);
    tru[1].push_back(truths[i].y);
  }
  double raw[2][2];  // raw[latent dim][physical axis]
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t a = 0; a < 2; ++a) raw[d][a] = pearson(lat[d], tru[a]);
  AxisMetrics best;
  double best_score = -1e300;
  for (const auto& asg : all_assignments()) {
    const double score = asg.sign[0] * raw[asg.perm[0]][0] + asg.sign[1] * raw[asg.perm[1]][1];
    if (score > best_score) {
      best_score = score;
      best.assignment = asg;
    }
  }
  for (std::size_t a = 0; a < 2; ++a) {
    std::vector<double> y = lat[best.assignment.perm[a]];
    for (auto& v : y) v *= best.assignment.sign[a];
    best.r[a] = pearson(y, tru[a]);
    const LineFit f = fit_line(tru[a], y);
    best.slope[a] = f.slope;
    best.intercept[a] = f.intercept;
  }
  return best;
}

struct LatentMap {
  std::vector<Latent2> latents;        // encoder means, one per validation frame
  std::vector<Vec2> truths;            // true ee positions, same order
  std::vector<Latent2> goal_predicted; // predict_goal(encode_tactile(I_z).mean).mean per episode
  std::vector<Latent2> goal_encoded;   // encode_camera(I_g).mean per episode
  std::vector<Vec2> goal_truths;       // true insertion positions
  AxisMetrics metrics;

  // Mean latent distance between predicted and encoded goals; 0 without goals.
  double goal_placement_error() const {
    if (goal_predicted.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < goal_predicted.size(); ++i)
      s += std::hypot(goal_predicted[i][0] - goal_encoded[i][0], goal_predicted[i][1] - goal_encoded[i][1]);
    return s / static_cast<double>(goal_predicted.size());
  }
};

inline Latent2 to_latent2(const std::vector<double>& v) {
  if (v.size() != 2) throw ad::ShapeError("latent map: latent dimension must be 2, got " + std::to_string(v.size()));
  return {v[0], v[1]};
}

inline LatentMap latent_map(const ModelBundle& m, const std::vector<EpisodeRecord>& validation) {
  LatentMap map;
  for (const auto& e : validation) {
    if (e.truth.ee_pos.size() != e.frames.size())
      throw std::invalid_argument("latent_map: validation episodes must carry truth");
    std::vector<const Image*> imgs;
    for (const auto& f : e.frames) imgs.push_back(&f.camera);
    const auto beliefs = encode_camera(m, imgs);
    for (std::size_t t = 0; t < beliefs.size(); ++t) {
      map.latents.push_back(to_latent2(beliefs[t].mean));
      map.truths.push_back(e.truth.ee_pos[t]);
    }
    if (uses_tactile(m.hp.variant)) {
      map.goal_predicted.push_back(to_latent2(predict_goal(m, encode_tactile(m, e.tactile).mean).mean));
      map.goal_encoded.push_back(to_latent2(encode_camera(m, e.goal).mean));
      map.goal_truths.push_back(e.truth.insertion_position);
    }
  }
  map.metrics = correlation_metrics(map.latents, map.truths);
  return map;
}

// --- SVG ----------------------------------------------------------------------

inline std::array<int, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s, hp = h * 6.0, x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0)), m = v - c;
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  auto to8 = [m](double u) { return static_cast<int>(std::lround(std::clamp(u + m, 0.0, 1.0) * 255.0)); };
  return {to8(r), to8(g), to8(b)};
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Scatter of assigned latent coordinates. Hue encodes true X, saturation
// true Y; stars mark predicted goals.
inline std::string render_latent_svg(const LatentMap& map, const std::string& title = "latent map") {
  if (map.latents.empty()) throw std::invalid_argument("export_latent_map: map is empty");
  constexpr double W = 480, H = 480, pad = 60;
  std::vector<Latent2> pts, goals;
  for (const auto& l : map.latents) pts.push_back(map.metrics.assignment.apply(l));
  for (const auto& g : map.goal_predicted) goals.push_back(map.metrics.assignment.apply(g));
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const auto* set : {&pts, &goals})
    for (const auto& p : *set)
      for (int k = 0; k < 2; ++k) {
        lo[k] = std::min(lo[k], p[k]);
        hi[k] = std::max(hi[k], p[k]);
      }
  for (int k = 0; k < 2; ++k)
    if (!(hi[k] > lo[k])) {
      lo[k] -= 1e-3;
      hi[k] += 1e-3;
    }
  double tlo[2] = {1e300, 1e300}, thi[2] = {-1e300, -1e300};
  for (const auto& t : map.truths) {
    tlo[0] = std::min(tlo[0], t.x);
    thi[0] = std::max(thi[0], t.x);
    tlo[1] = std::min(tlo[1], t.y);
    thi[1] = std::max(thi[1], t.y);
  }
  auto norm = [](double v, double a, double b) { return b > a ? (v - a) / (b - a) : 0.5; };
  auto px = [&](const Latent2& p) {
    return std::array<double, 2>{pad + norm(p[0], lo[0], hi[0]) * (W - 2 * pad),
                                 H - pad - norm(p[1], lo[1], hi[1]) * (H - 2 * pad)};
  };
  std::string out;
  char buf[512];
  auto emit = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  emit("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
       W, H, W, H);
  emit("<rect x=\"0\" y=\"0\" width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", W, H);
  emit("<text x=\"%.0f\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">", W / 2);
  out += xml_escape(title) + "</text>\n";
  emit("<rect x=\"%.0f\" y=\"%.0f\" width=\"%.0f\" height=\"%.0f\" fill=\"none\" stroke=\"black\"/>\n", pad, pad, W - 2 * pad,
       H - 2 * pad);
  emit("<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">latent X [m]</text>\n",
       W / 2, H - 18);
  emit("<text x=\"18\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
       "transform=\"rotate(-90 18 %.0f)\">latent Y [m]</text>\n",
       H / 2, H / 2);
  emit("<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n", pad, H - pad + 14, lo[0]);
  emit("<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n", W - pad,
       H - pad + 14, hi[0]);
  emit("<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n", pad - 4,
       H - pad, lo[1]);
  emit("<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n", pad - 4,
       pad + 8, hi[1]);
  out += "<g id=\"points\">\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto p = px(pts[i]);
    const auto c = hsv_to_rgb(0.8 * norm(map.truths[i].x, tlo[0], thi[0]), 0.15 + 0.85 * norm(map.truths[i].y, tlo[1], thi[1]), 0.9);
    emit("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"rgb(%d,%d,%d)\"/>\n", p[0], p[1], c[0], c[1], c[2]);
  }
  out += "</g>\n<g id=\"goals\">\n";
  for (const auto& g : goals) {
    const auto p = px(g);
    std::string pts_attr;
    for (int k = 0; k < 10; ++k) {
      const double a = -M_PI / 2 + k * M_PI / 5, rad = (k % 2 == 0) ? 7.0 : 3.0;
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", k ? " " : "", p[0] + rad * std::cos(a), p[1] + rad * std::sin(a));
      pts_attr += buf;
    }
    out += "<polygon points=\"" + pts_attr + "\" fill=\"gold\" stroke=\"black\" stroke-width=\"0.6\"/>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

inline void export_latent_map(const LatentMap& map, const std::string& path, const std::string& title = "latent map") {
  const std::string svg = render_latent_svg(map, title);
  write_file(path, std::vector<std::uint8_t>(svg.begin(), svg.end()));
}

}  // namespace tsnvae
