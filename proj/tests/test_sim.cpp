#include "tsnvae/sim.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tsnvae;

namespace {

SimConfig quiet() {
  SimConfig c;
  c.process_noise_std = 0.0;
  return c;
}

// Intensity-weighted centroid of `ch` above the background level.
std::pair<double, double> centroid(const Image& img, std::size_t ch, double floor) {
  double w = 0.0, u = 0.0, v = 0.0;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      const double a = std::max(0.0, img.at(r, c, ch) - floor);
      w += a;
      u += a * static_cast<double>(c);
      v += a * static_cast<double>(r);
    }
  return {u / w, v / w};
}

bool in_unit_range(const Image& img) {
  for (double v : img.data)
    if (!(v >= 0.0 && v <= 1.0)) return false;
  return true;
}

}  // namespace

TEST(Reset, SameSeedSameState) {
  Env a, b;
  EXPECT_EQ(a.reset(42), b.reset(42));
  EXPECT_EQ(a.reset(42), a.reset(42));
  EXPECT_NE(a.reset(42), a.reset(43));
}

TEST(Reset, GraspOffsetIsCenteredAndBounded) {
  Env env;
  double sx = 0.0, sy = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto s = env.reset(static_cast<std::uint64_t>(i));
    ASSERT_LE(std::abs(s.grasp_offset.x), 0.003);
    ASSERT_LE(std::abs(s.grasp_offset.y), 0.003);
    ASSERT_LE(std::abs(s.tilt), 0.1);
    sx += s.grasp_offset.x;
    sy += s.grasp_offset.y;
  }
  EXPECT_NEAR(sx / n, 0.0, 0.0002);
  EXPECT_NEAR(sy / n, 0.0, 0.0002);
}

TEST(Reset, StartsAtTheInsertionPosition) {
  Env env;
  for (std::uint64_t i = 0; i < 100; ++i) EXPECT_TRUE(env.is_success(env.reset(i), 1e-6));
}

TEST(Reset, TiltGrowsWithOffsetMagnitude) {
  Env env;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto s = env.reset(i);
    ASSERT_LE(std::abs(s.tilt), env.config().tilt_gain * s.grasp_offset.norm() + 1e-15);
  }
}

TEST(Step, ZeroActionWithoutNoiseIsIdentity) {
  Env env(quiet());
  const auto s = env.reset(1);
  EXPECT_EQ(env.step(s, {0.0, 0.0}, 0.5), s);
}

TEST(Step, IntegratesVelocity) {
  Env env(quiet());
  WorldState s;
  s.ee_pos = {0.01, 0.02};
  const auto n = env.step(s, {0.01, -0.01}, 0.5);
  EXPECT_NEAR(n.ee_pos.x, 0.015, 1e-15);
  EXPECT_NEAR(n.ee_pos.y, 0.015, 1e-15);
  EXPECT_EQ(n.grasp_offset, s.grasp_offset);
  EXPECT_EQ(n.tilt, s.tilt);
  EXPECT_EQ(n.socket_pos, s.socket_pos);
}

TEST(Step, ExcessActionIsClampedAndCounted) {
  Env env(quiet());
  WorldState s;
  const auto n = env.step(s, {0.5, -0.02}, 1.0);
  EXPECT_NEAR(n.ee_pos.x, 0.01, 1e-15);
  EXPECT_NEAR(n.ee_pos.y, -0.01, 1e-15);
  EXPECT_EQ(env.clamp_warnings(), 1u);
  env.step(s, {0.01, 0.01}, 1.0);
  EXPECT_EQ(env.clamp_warnings(), 1u);
}

TEST(Step, StaysInsideTheWorkspace) {
  Env env;
  auto s = env.reset(3);
  for (int i = 0; i < 200; ++i) {
    s = env.step(s, {0.01, -0.01}, 0.5);
    ASSERT_LE(std::abs(s.ee_pos.x - s.socket_pos.x), 0.05);
    ASSERT_LE(std::abs(s.ee_pos.y - s.socket_pos.y), 0.05);
  }
  EXPECT_DOUBLE_EQ(s.ee_pos.x, 0.05);
  EXPECT_DOUBLE_EQ(s.ee_pos.y, -0.05);
}

TEST(Step, NoiseMatchesProcessNoise) {
  Env env;
  const auto s0 = env.reset(5);
  double sx = 0.0, sxx = 0.0, sy = 0.0, syy = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto d = env.step(s0, {0.0, 0.0}, env.config().dt_collect).ee_pos - s0.ee_pos;
    sx += d.x;
    sxx += d.x * d.x;
    sy += d.y;
    syy += d.y * d.y;
  }
  const double stdx = std::sqrt(sxx / n - (sx / n) * (sx / n));
  const double stdy = std::sqrt(syy / n - (sy / n) * (sy / n));
  EXPECT_NEAR(stdx, 1e-4, 1e-5);
  EXPECT_NEAR(stdy, 1e-4, 1e-5);
}

TEST(Step, NoiseScalesWithTheSquareRootOfDt) {
  Env env;
  const auto s0 = env.reset(6);
  double sxx = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double d = env.step(s0, {0.0, 0.0}, 0.05).ee_pos.x - s0.ee_pos.x;
    sxx += d * d;
  }
  EXPECT_NEAR(std::sqrt(sxx / n), 1e-4 * std::sqrt(0.1), 1e-4 * std::sqrt(0.1) * 0.05);
}

TEST(Success, RejectsNonPositiveTolerance) {
  Env env;
  EXPECT_THROW(env.is_success(env.reset(1), 0.0), std::invalid_argument);
}

TEST(Camera, PureFunctionOfRelativePoseAndGrasp) {
  Env env;
  auto a = env.reset(7);
  auto b = a;
  b.socket_pos = a.socket_pos + Vec2{0.004, -0.002};
  b.ee_pos = a.ee_pos + Vec2{0.004, -0.002};
  EXPECT_EQ(env.render_camera(a), env.render_camera(b));
  EXPECT_EQ(env.render_camera(a), env.render_camera(a));
}

TEST(Camera, ValuesInUnitRangeAndQuantized) {
  Env env;
  auto s = env.reset(8);
  s.ee_pos = s.ee_pos + Vec2{0.02, -0.03};
  const auto img = env.render_camera(s);
  EXPECT_EQ(img.size(), 32u * 32u * 3u);
  EXPECT_TRUE(in_unit_range(img));
  for (double v : img.data) ASSERT_DOUBLE_EQ(v, quantize8(v));
}

TEST(Camera, SocketGlyphShiftsOppositeToTheArm) {
  SimConfig cfg = quiet();
  Env env(cfg);
  WorldState s;  // zero grasp: plug sits at the image center
  s.ee_pos = {-0.01, 0.0};
  auto t = s;
  t.ee_pos = {-0.009, 0.0};
  // Red dominates the socket color; the plug adds little red.
  const auto c0 = centroid(env.render_camera(s), 0, 0.2);
  const auto c1 = centroid(env.render_camera(t), 0, 0.2);
  EXPECT_NEAR(c1.first - c0.first, -0.001 * cfg.camera_px_per_m, 0.03);
  EXPECT_NEAR(c1.second - c0.second, 0.0, 1e-3);
}

TEST(Camera, GlyphsCoincideAtTheInsertionPosition) {
  Env env;
  const auto s = env.reset(9);
  const auto [su, sv] = env.camera_pixel(s.socket_pos - s.ee_pos);
  const auto [pu, pv] = env.camera_pixel(env.plug_tip(s));
  EXPECT_NEAR(su, pu, 1e-9);
  EXPECT_NEAR(sv, pv, 1e-9);
}

TEST(Tactile, IndependentOfArmPosition) {
  Env env;
  auto a = env.reset(10);
  auto b = a;
  b.ee_pos = b.ee_pos + Vec2{0.03, 0.01};
  EXPECT_EQ(env.render_tactile(a), env.render_tactile(b));
}

TEST(Tactile, ZeroGraspIsCenteredAndSymmetric) {
  Env env;
  WorldState s;
  const auto img = env.render_tactile(s);
  EXPECT_TRUE(in_unit_range(img));
  const std::size_t n = img.width;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        ASSERT_DOUBLE_EQ(img.at(r, c, ch), img.at(r, n - 1 - c, ch));
        ASSERT_DOUBLE_EQ(img.at(r, c, ch), img.at(n - 1 - r, c, ch));
      }
}

TEST(Tactile, AppearanceIsNotTranslationInvariant) {
  // Shift the image for -2.5 mm onto the one for +2.5 mm and compare the
  // residual on the overlap with and without lighting and distortion.
  const auto residual = [](bool lit) {
    SimConfig cfg;
    cfg.tactile_lighting = lit;
    Env env(cfg);
    WorldState a, b;
    a.grasp_offset = {0.0025, 0.0};
    b.grasp_offset = {-0.0025, 0.0};
    const auto ia = env.render_tactile(a), ib = env.render_tactile(b);
    const auto shift = static_cast<std::size_t>(std::lround(cfg.tactile_px_per_m * 0.005));
    double sum = 0.0;
    for (std::size_t r = 0; r < ia.height; ++r)
      for (std::size_t c = shift; c < ia.width; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) sum += std::abs(ia.at(r, c, ch) - ib.at(r, c - shift, ch));
    return sum;
  };
  const double plain = residual(false), lit = residual(true);
  EXPECT_LT(plain, 0.5);
  EXPECT_GT(lit, plain + 5.0);
}

TEST(Tactile, TiltShearsTheGlyph) {
  Env env;
  WorldState a, b;
  a.grasp_offset = b.grasp_offset = {0.001, 0.001};
  b.tilt = 0.05;
  EXPECT_NE(env.render_tactile(a), env.render_tactile(b));
}

TEST(Ppm, RoundTrip) {
  Env env;
  const auto img = env.render_camera(env.reset(11));
  const std::string path = ::testing::TempDir() + "/tsnvae_rt.ppm";
  write_ppm(img, path);
  EXPECT_EQ(read_ppm(path), img);
}

TEST(SimConfigJson, RoundTripAndUnknownKeys) {
  SimConfig c;
  c.camera_size = 16;
  c.socket_pos = {0.1, -0.2};
  const nlohmann::json j = c;
  const auto back = j.get<SimConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW(nlohmann::json({{"camera_sise", 3}}).get<SimConfig>(), ConfigError);
}
