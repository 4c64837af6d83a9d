#include "toy_model.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tsnvae;
using namespace tsnvae::testing;

namespace {

// Sets the last layer of `net` to emit the constant `out`.
void pin_output(nn::Mlp& net, const std::vector<double>& out) {
  auto& last = net.layers.back();
  std::fill(last.weight.data.begin(), last.weight.data.end(), 0.0);
  last.bias.data = out;
}

bool all_finite(const DiagGaussian& g) {
  for (std::size_t i = 0; i < g.dim(); ++i)
    if (!std::isfinite(g.mean[i]) || !std::isfinite(g.log_std[i])) return false;
  return true;
}

}  // namespace

TEST(Variants, TagsRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_tag(v)), v);
  EXPECT_THROW(parse_variant("NVAE++"), ConfigError);
  EXPECT_EQ(variant_tag(Variant::TsNvae), "TS-NVAE");
}

TEST(Variants, ObjectiveMapping) {
  EXPECT_TRUE(uses_simplified_prior(Variant::TsNvae) && uses_tactile(Variant::TsNvae) &&
              uses_additional_kl(Variant::TsNvae));
  EXPECT_FALSE(uses_additional_kl(Variant::TsNvaeNoAdditionalKl));
  EXPECT_TRUE(uses_additional_kl(Variant::TsNvaeSigmaX1));
  EXPECT_FALSE(uses_tactile(Variant::Nvae) || uses_simplified_prior(Variant::Nvae));
  EXPECT_TRUE(uses_tactile(Variant::NvaeTactile) && !uses_simplified_prior(Variant::NvaeTactile));
  EXPECT_TRUE(uses_trainable_abc(Variant::NvaeTrainAbc));
  EXPECT_EQ(HyperParams::for_variant(Variant::TsNvaeSigmaX1).sigma_x, 1.0);
  EXPECT_EQ(HyperParams::for_variant(Variant::TsNvae).sigma_x, 1e-4);
  EXPECT_EQ(HyperParams{}.sigma_g, 0.0015);
  EXPECT_EQ(HyperParams{}.latent_dim, 2u);
}

TEST(HyperParamsJson, RoundTripAndUnknownKeys) {
  HyperParams hp = toy_hp(Variant::NvaeTrainAbc);
  const nlohmann::json j = hp;
  EXPECT_EQ(nlohmann::json(j.get<HyperParams>()), j);
  EXPECT_THROW(nlohmann::json({{"sigma_q", 1.0}}).get<HyperParams>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"lr_decay_at", 1.5}}).get<HyperParams>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"lr_decay_at", -0.1}}).get<HyperParams>(), ConfigError);
  EXPECT_EQ(nlohmann::json({{"lr_final", 1e-6}}).get<HyperParams>().lr_final, 1e-6);
}

TEST(TransitionPrior, Arithmetic) {
  HyperParams hp;
  const auto p = transition_prior(std::vector<double>{0.01, 0.02}, std::vector<double>{0.01, -0.01}, hp);
  EXPECT_NEAR(p.mean[0], 0.015, 1e-15);
  EXPECT_NEAR(p.mean[1], 0.015, 1e-15);
  EXPECT_NEAR(p.std_dev(0), 1e-4, 1e-18);
  EXPECT_NEAR(p.std_dev(1), 1e-4, 1e-18);
  const auto still = transition_prior(std::vector<double>{0.3, -0.1}, std::vector<double>{0.0, 0.0}, hp);
  EXPECT_EQ(still.mean, (std::vector<double>{0.3, -0.1}));
  const auto wide = transition_prior(std::vector<double>{0.0, 0.0}, std::vector<double>{0.0, 0.0},
                                     HyperParams::for_variant(Variant::TsNvaeSigmaX1));
  EXPECT_DOUBLE_EQ(wide.std_dev(0), 1.0);
  EXPECT_DOUBLE_EQ(wide.std_dev(1), 1.0);
}

TEST(VelocityUpdate, FixedMode) {
  NvaeTransitionParams p;
  const auto v = nvae_velocity_update(std::vector<double>{0.3, 0.4}, std::vector<double>{0.0, 0.0},
                                      std::vector<double>{0.01, 0.0}, p, 0.5);
  EXPECT_NEAR(v[0], 0.005, 1e-15);
  EXPECT_EQ(v[1], 0.0);
  const auto same = nvae_velocity_update(std::vector<double>{0.3, 0.4}, std::vector<double>{0.2, -0.1},
                                         std::vector<double>{0.0, 0.0}, p, 0.5);
  EXPECT_EQ(same, (std::vector<double>{0.2, -0.1}));
  const auto abc = nvae_abc(p, std::vector<double>{1, 1}, std::vector<double>{1, 1}, std::vector<double>{1, 1});
  EXPECT_EQ(abc.a, (std::vector<double>{0, 0}));
  EXPECT_EQ(abc.b, (std::vector<double>{0, 0}));
  EXPECT_EQ(abc.c, (std::vector<double>{1, 1}));
}

TEST(VelocityUpdate, TrainableSignsHold) {
  Rng pick = make_rng(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = ModelBundle::create(toy_hp(Variant::NvaeTrainAbc), seed);
    ASSERT_EQ(m.transition.mode, AbcMode::Trainable);
    const std::vector<double> x{u(pick), u(pick)}, v{u(pick), u(pick)}, a{u(pick), u(pick)};
    const auto abc = nvae_abc(m.transition, x, v, a);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_LT(abc.b[i], 0.0);
      EXPECT_GT(abc.c[i], 0.0);
    }
  }
}

TEST(VelocityUpdate, TrainableActsDiagonally) {
  const auto m = ModelBundle::create(toy_hp(Variant::NvaeTrainAbc), 3);
  const std::vector<double> x{0.1, 0.2}, v{0.3, -0.2}, u{0.5, 0.5};
  const auto abc = nvae_abc(m.transition, x, v, u);
  const auto out = nvae_velocity_update(x, v, u, m.transition, 0.5);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(out[i], v[i] + 0.5 * (abc.a[i] * x[i] + abc.b[i] * v[i] + abc.c[i] * u[i]), 1e-15);
}

TEST(Encoders, DeterministicAndFinite) {
  const auto m = ModelBundle::create(HyperParams{}, 1);
  Env env;
  const auto s = env.reset(2);
  const auto cam = env.render_camera(s), tac = env.render_tactile(s);
  const auto a = encode_camera(m, cam), b = encode_camera(m, cam);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.log_std, b.log_std);
  EXPECT_TRUE(all_finite(a));
  EXPECT_EQ(encode_tactile(m, tac).mean, encode_tactile(m, tac).mean);
  EXPECT_TRUE(all_finite(encode_tactile(m, tac)));
  const auto g = predict_goal(m, encode_tactile(m, tac).mean);
  EXPECT_EQ(g.mean, predict_goal(m, encode_tactile(m, tac).mean).mean);
  EXPECT_TRUE(all_finite(g));
}

TEST(Encoders, TactileBeliefDependsOnlyOnTheGrasp) {
  const auto m = ModelBundle::create(HyperParams{}, 1);
  Env env;
  const auto a = collect_episode(env, 5, 4);
  auto s = env.reset(5);
  s.ee_pos = s.ee_pos + Vec2{0.02, -0.01};
  const auto b = encode_tactile(m, env.render_tactile(s));
  EXPECT_EQ(encode_tactile(m, a.tactile).mean, b.mean);
}

TEST(Encoders, WrongImageSizeIsRejected) {
  const auto m = ModelBundle::create(HyperParams{}, 1);
  EXPECT_THROW(encode_camera(m, Image(8, 8, 3)), ad::ShapeError);
  EXPECT_THROW(encode_tactile(m, Image(8, 8, 3)), ad::ShapeError);
  EXPECT_THROW(predict_goal(m, std::vector<double>{1.0}), ad::ShapeError);
}

TEST(Decoders, OutputsInUnitRange) {
  const auto m = ModelBundle::create(HyperParams{}, 2);
  Rng rng = make_rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int k = 0; k < 20; ++k) {
    const std::vector<double> x{n(rng), n(rng)};
    for (double v : decode_camera(m, x)) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : decode_tactile(m, x)) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  EXPECT_EQ(decode_camera(m, std::vector<double>{0, 0}).size(), 32u * 32u * 3u);
  EXPECT_EQ(decode_tactile(m, std::vector<double>{0, 0}).size(), 24u * 24u * 3u);
}

TEST(Losses, GoalKlVanishesWhenPriorEqualsPosterior) {
  const auto m = ModelBundle::create(toy_hp(Variant::TsNvae), 1);
  const auto ep = toy_episode(3, 2);
  ad::Tape tape;
  Objective obj(tape, m, {&ep}, {make_rng(1)});
  EXPECT_GT(obj.goal_kl().value().item(), 0.0);
  obj.set_goal_prior(obj.goal_posterior());
  EXPECT_EQ(obj.goal_kl().value().item(), 0.0);
}

TEST(Losses, AdditionalKlIsZeroAtTheReferencePrior) {
  auto m = ModelBundle::create(toy_hp(Variant::TsNvae), 1);
  const double ls = std::log(m.hp.sigma_g);
  pin_output(m.camera_encoder, {0.0, 0.0, ls, ls});
  pin_output(m.goal_predictor, {0.0, 0.0, ls, ls});
  Rng rng = make_rng(2);
  EXPECT_NEAR(loss_additional_kl(m, toy_episode(4, 2), rng), 0.0, 1e-15);
}

TEST(Losses, AdditionalKlClosedForm) {
  auto m = ModelBundle::create(toy_hp(Variant::TsNvae), 1);
  const double lg = std::log(m.hp.sigma_g);
  pin_output(m.camera_encoder, {0.002, 0.0, std::log(0.001), lg});
  pin_output(m.goal_predictor, {0.0, 0.0, lg, lg});
  Rng rng = make_rng(2);
  EXPECT_NEAR(loss_additional_kl(m, toy_episode(4, 2), rng), 1.01657, 1e-5);
}

TEST(Losses, AdditionalKlReachesEncoderAndPredictor) {
  auto m = ModelBundle::create(toy_hp(Variant::TsNvae), 1);
  m.zero_grad();
  Rng rng = make_rng(2);
  loss_additional_kl(m, toy_episode(4, 2), rng, true);
  const auto norm = [](const ad::Tensor& t) {
    double s = 0.0;
    for (double g : t.grad) s += g * g;
    return s;
  };
  EXPECT_GT(norm(m.camera_encoder.layers.front().weight), 0.0);
  EXPECT_GT(norm(m.goal_predictor.layers.front().weight), 0.0);
  EXPECT_GT(norm(m.tactile_encoder.layers.front().weight), 0.0);
}

TEST(Losses, KlTermsAreNonNegative) {
  const auto m = ModelBundle::create(toy_hp(Variant::TsNvae), 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto ep = toy_episode(s, 4);
    ad::Tape tape;
    Objective obj(tape, m, {&ep}, {make_rng(s)});
    EXPECT_GE(obj.goal_kl().value().item(), 0.0);
    EXPECT_GE(obj.additional_kl().value().item(), 0.0);
  }
}

TEST(Losses, ShortEpisodesAreRejected) {
  const auto m = ModelBundle::create(toy_hp(Variant::Nvae), 1);
  Rng rng = make_rng(1);
  EXPECT_THROW(loss_lx(m, toy_episode(1, 1), rng), std::invalid_argument);
  EXPECT_THROW(nvae_elbo(m, toy_episode(1, 2), rng), std::invalid_argument);
}

TEST(Losses, MixedHorizonsAreRejected) {
  const auto m = ModelBundle::create(toy_hp(Variant::TsNvae), 1);
  const auto a = toy_episode(1, 3), b = toy_episode(2, 4);
  ad::Tape tape;
  EXPECT_THROW(Objective(tape, m, {&a, &b}, {make_rng(1), make_rng(2)}), std::invalid_argument);
}

TEST(Losses, PermutationInvariantOverTheBatch) {
  for (Variant v : kAllVariants) {
    const auto m = ModelBundle::create(toy_hp(v), 1);
    const auto a = toy_episode(1, 4), b = toy_episode(2, 4), c = toy_episode(3, 4);
    const auto value = [&](std::vector<const EpisodeRecord*> eps, std::vector<std::uint64_t> seeds) {
      std::vector<Rng> rngs;
      for (auto s : seeds) rngs.push_back(make_rng(s));
      ad::Tape tape;
      Objective obj(tape, m, std::move(eps), std::move(rngs));
      return obj.total(v).value().item();
    };
    const double fwd = value({&a, &b, &c}, {10, 20, 30});
    const double rev = value({&c, &a, &b}, {30, 10, 20});
    EXPECT_NEAR(fwd, rev, 1e-12 * std::abs(fwd)) << variant_tag(v);
  }
}

TEST(Losses, NvaeLeavesTactileHeadsUntouched) {
  auto m = ModelBundle::create(toy_hp(Variant::Nvae), 1);
  const auto ep = toy_episode(2, 4);
  m.zero_grad();
  ad::Tape tape;
  Objective obj(tape, m, {&ep}, {make_rng(1)});
  tape.backward(obj.total(Variant::Nvae));
  for (auto& [name, t] : m.named_parameters()) {
    if (name.rfind("tactile", 0) == 0 || name.rfind("goal_predictor", 0) == 0) {
      for (double g : t->grad) ASSERT_EQ(g, 0.0) << name;
    }
  }
}

// Every loss against central differences on a toy bundle.
struct FdCase {
  const char* name;
  Variant variant;
  EpisodeLoss loss;
  std::size_t horizon;
};

class LossFd : public ::testing::TestWithParam<FdCase> {};

TEST_P(LossFd, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto m = ModelBundle::create(toy_hp(c.variant), seed);
    const auto ep = toy_episode(seed + 10, c.horizon);
    const auto g = check_episode_loss(m, ep, c.loss, seed + 100);
    EXPECT_LT(g.relative_error(), 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllLosses, LossFd,
    ::testing::Values(FdCase{"lx", Variant::TsNvae, &loss_lx, 2}, FdCase{"lx_wide", Variant::TsNvaeSigmaX1, &loss_lx, 3},
                      FdCase{"lz", Variant::TsNvae, &loss_lz, 2},
                      FdCase{"additional_kl", Variant::TsNvae, &loss_additional_kl, 2},
                      FdCase{"elbo", Variant::Nvae, &nvae_elbo, 3},
                      FdCase{"elbo_trainable", Variant::NvaeTrainAbc, &nvae_elbo, 4}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Bundle, SameSeedSameParameters) {
  auto a = ModelBundle::create(HyperParams{}, 5), b = ModelBundle::create(HyperParams{}, 5);
  auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->data, pb[i].second->data);
  }
}

TEST(Bundle, CameraEncoderGeometry) {
  const auto m = ModelBundle::create(HyperParams{}, 5);
  EXPECT_EQ(m.camera_encoder.in(), 16u * 16u * 3u);
  EXPECT_EQ(m.camera_encoder.out(), 4u);
  EXPECT_EQ(m.camera_decoder.out(), 32u * 32u * 3u);
  EXPECT_EQ(m.goal_predictor.layers.size(), 3u);
  EXPECT_EQ(m.goal_predictor.layers[0].out(), 16u);
}

TEST(Bundle, GaussianHeadsStartAtGoalPriorScale) {
  HyperParams hp;
  hp.sigma_g = 0.002;
  auto m = ModelBundle::create(hp, 5);
  for (const nn::Mlp* net : {&m.camera_encoder, &m.tactile_encoder, &m.goal_predictor}) {
    const auto& b = net->layers.back().bias.data;
    ASSERT_EQ(b.size(), 4u);
    EXPECT_NE(b[0], std::log(hp.sigma_g));
    EXPECT_EQ(b[2], std::log(hp.sigma_g));
    EXPECT_EQ(b[3], std::log(hp.sigma_g));
  }
}
