#include "grad_check.hpp"
#include "tsnvae/cfil.hpp"
#include "tsnvae/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tsnvae;
using namespace tsnvae::testing;

namespace {

struct Trained {
  std::vector<EpisodeRecord> train, validation;
  CfilParams params;
};

// One default-configuration fit shared by the slow tests.
const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    const auto eps = collect_dataset(SimConfig{}, 100, 7);
    auto split = split_dataset(eps, 30, 7);
    out.train = std::move(split.train);
    out.validation = std::move(split.validation);
    out.params = train_cfil(out.train, SimConfig{}, CfilConfig{}, 3);
    return out;
  }();
  return t;
}

double relative_error_on(const CfilParams& p, const std::vector<EpisodeRecord>& eps, bool fine) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : eps)
    for (std::size_t t = 0; t < e.frames.size(); ++t) {
      const Vec2 truth = SimConfig{}.socket_pos - e.truth.ee_pos[t];
      sum += (regress_relative(p, e.frames[t].camera, fine) - truth).norm();
      ++n;
    }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST(CfilConfigJson, RoundTripAndUnknownKeys) {
  CfilConfig c;
  c.mount_error = {0.0003, 0.0};
  c.hidden = {8};
  EXPECT_EQ(nlohmann::json(nlohmann::json(c).get<CfilConfig>()), nlohmann::json(c));
  EXPECT_THROW(nlohmann::json({{"radius", 3}}).get<CfilConfig>(), ConfigError);
}

TEST(Features, Geometry) {
  Env env;
  const auto img = env.render_camera(env.reset(1));
  EXPECT_EQ(coarse_features(img).size(), 16u * 16u * 3u);
  EXPECT_EQ(fine_features(img, 0.5).size(), 16u * 16u * 3u);
  EXPECT_EQ(fine_features(img, 1.0), img.data);
  EXPECT_THROW(crop_side(32, 0.0), ConfigError);
  EXPECT_THROW(crop_side(32, 1.5), ConfigError);
  Image flat(4, 4, 3);
  std::fill(flat.data.begin(), flat.data.end(), 0.5);
  for (double v : coarse_features(flat)) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Regression, LossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng = make_rng(seed);
    CfilConfig cfg;
    cfg.hidden = {6, 5};
    nn::Mlp net = make_regressor(7, cfg, rng);
    const ad::Tensor x = random_tensor({9, 7}, rng, 0.0, 1.0, false);
    const ad::Tensor y = random_tensor({9, 2}, rng, -1.0, 1.0, false);
    std::vector<std::pair<std::string, ad::Tensor*>> named;
    net.collect("net", named);
    std::vector<ad::Tensor*> params;
    for (auto& [_, t] : named) params.push_back(t);
    const auto g = check_gradients(params, all_coords(params), [&](bool bp) { return regression_loss(net, x, y, bp); });
    EXPECT_LT(g.relative_error(), 1e-4) << "seed " << seed;
  }
}

TEST(Regression, ShapeMismatchIsRejected) {
  Rng rng = make_rng(1);
  nn::Mlp net = make_regressor(3, CfilConfig{}, rng);
  EXPECT_THROW(regression_loss(net, ad::Tensor::zeros({2, 3}), ad::Tensor::zeros({2, 3})), ad::ShapeError);
  EXPECT_THROW(train_cfil({}, SimConfig{}, CfilConfig{}, 1), std::invalid_argument);
}

TEST(Training, LossDropsTenfold) {
  const auto& p = trained().params;
  EXPECT_EQ(p.coarse_losses.size(), CfilConfig{}.train_steps + 1);
  EXPECT_LT(p.coarse_losses.back(), p.coarse_losses.front() / 10.0);
  EXPECT_LT(p.tactile_losses.back(), p.tactile_losses.front() / 10.0);
  EXPECT_LT(p.fine_losses.back(), p.fine_losses.front());
}

TEST(Training, FineStageImprovesOnValidation) {
  const auto& t = trained();
  const double coarse = relative_error_on(t.params, t.validation, false);
  const double both = relative_error_on(t.params, t.validation, true);
  EXPECT_GT(coarse, both);
  EXPECT_LT(both, 1e-3);
}

TEST(Training, DeterministicUnderAFixedSeed) {
  const auto eps = collect_dataset(SimConfig{}, 4, 2, 5);
  CfilConfig cfg;
  cfg.train_steps = 20;
  const auto a = train_cfil(eps, SimConfig{}, cfg, 9), b = train_cfil(eps, SimConfig{}, cfg, 9);
  EXPECT_EQ(a.coarse_losses, b.coarse_losses);
  EXPECT_EQ(a.fine_losses, b.fine_losses);
  EXPECT_EQ(a.tactile_losses, b.tactile_losses);
  EXPECT_EQ(a.tactile.layers.back().weight.data, b.tactile.layers.back().weight.data);
}

TEST(Template, SelfMatchWithoutLightingIsExact) {
  SimConfig sim;
  sim.tactile_lighting = false;
  const Image ref = reference_tactile(sim);
  const auto m = template_match(ref, make_template(ref, 0.25), 8);
  EXPECT_EQ(m.du, 0);
  EXPECT_EQ(m.dv, 0);
  EXPECT_NEAR(m.score, 1.0, 1e-12);
}

TEST(Template, FlatImageHasNoMatch) {
  SimConfig sim;
  const Image tpl = make_template(reference_tactile(sim), 0.25);
  Image flat(24, 24, 3);
  std::fill(flat.data.begin(), flat.data.end(), 0.4);
  EXPECT_THROW(template_match(flat, tpl, 8), NoMatchError);
  EXPECT_THROW(template_match(tpl, reference_tactile(sim), 1), ad::ShapeError);
}

TEST(Template, ReturnsTheExhaustiveMaximum) {
  SimConfig sim;
  Env env(sim);
  const Image tpl = make_template(reference_tactile(sim), 0.25);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image img = env.render_tactile(env.reset(seed));
    const auto m = template_match(img, tpl, 8);
    double best = -2.0;
    for (std::size_t r = 0; r + tpl.height <= img.height; ++r)
      for (std::size_t c = 0; c + tpl.width <= img.width; ++c) {
        const double s = ncc_at(img, tpl, r, c);
        if (!std::isnan(s)) best = std::max(best, s);
      }
    EXPECT_EQ(m.score, best) << "seed " << seed;
  }
}

TEST(Template, RecoversPureTranslationsWithoutLighting) {
  SimConfig sim;
  sim.tactile_lighting = false;
  Env env(sim);
  const Image tpl = make_template(reference_tactile(sim), 0.25);
  WorldState s;
  s.grasp_offset = {2.0 / sim.tactile_px_per_m, -3.0 / sim.tactile_px_per_m};
  const auto m = template_match(env.render_tactile(s), tpl, 8);
  EXPECT_EQ(m.du, 2);
  EXPECT_EQ(m.dv, 3);
}

TEST(Template, LosesToTheTactileRegressorUnderLighting) {
  const auto e = grasp_localization_errors(trained().params, SimConfig{}, 7, 0.0025, 5);
  EXPECT_GT(e.template_mean, e.regressor_mean);
  EXPECT_THROW(grasp_localization_errors(trained().params, SimConfig{}, 1, 0.0025, 5), std::invalid_argument);
}

TEST(Trials, PlainErrorTracksTheGraspOffset) {
  const auto& p = trained().params;
  const SimConfig sim;
  Env env(sim);
  ControllerConfig ctrl;
  double err = 0.0, tip = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const auto seed = trial_seed(21, i);
    err += run_cfil_trial(p, sim, ctrl, CfilMethod::Plain, seed).final_error;
    tip += env.plug_tip(env.reset(seed)).norm();
  }
  EXPECT_NEAR(err / tip, 1.0, 0.3);
}

TEST(Trials, CompensationIsIdentityAtTheExpertGrasp) {
  const auto& p = trained().params;
  SimConfig sim;
  sim.grasp_range = 0.0;
  ControllerConfig ctrl;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto plain = run_cfil_trial(p, sim, ctrl, CfilMethod::Plain, i);
    const auto tpl = run_cfil_trial(p, sim, ctrl, CfilMethod::Template, i);
    const auto cnn = run_cfil_trial(p, sim, ctrl, CfilMethod::TactileCnn, i);
    EXPECT_EQ(tpl.grasp_estimate, Vec2{});
    EXPECT_EQ(tpl.goal, plain.goal);
    EXPECT_LT((cnn.goal - plain.goal).norm(), 5e-4);
  }
}

TEST(Trials, TactileCompensationBeatsPlain) {
  const auto& p = trained().params;
  const SimConfig sim;
  const ControllerConfig ctrl;
  const auto plain = run_cfil_trials(p, sim, ctrl, CfilMethod::Plain, 40, 21);
  const auto cnn = run_cfil_trials(p, sim, ctrl, CfilMethod::TactileCnn, 40, 21);
  EXPECT_LT(cnn.mean_error, plain.mean_error);
  EXPECT_EQ(plain.method, "CFIL");
  EXPECT_EQ(cnn.method, "CFIL+TactileCNN");
  EXPECT_THROW(run_cfil_trials(p, sim, ctrl, CfilMethod::Plain, 0, 21), std::invalid_argument);
}

TEST(Trials, MountTranslationLeavesTheGoalUnchanged) {
  CfilParams p = trained().params;
  const SimConfig sim;
  const ControllerConfig ctrl;
  const auto a = run_cfil_trial(p, sim, ctrl, CfilMethod::TactileCnn, 4);
  p.cfg.mount_error = {0.0003, -0.0002};
  const auto b = run_cfil_trial(p, sim, ctrl, CfilMethod::TactileCnn, 4);
  EXPECT_NEAR(a.goal.x, b.goal.x, 1e-15);
  EXPECT_NEAR(a.goal.y, b.goal.y, 1e-15);
}
