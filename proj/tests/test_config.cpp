#include "tsnvae/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace tsnvae;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path.string();
}

RunConfig parse(const std::string& text) {
  RunConfig c;
  from_json(nlohmann::json::parse(text), c);
  return c;
}

}  // namespace

TEST(RunConfig, EmptyObjectGivesDefaults) {
  const RunConfig c = parse("{}");
  EXPECT_EQ(nlohmann::json(c), nlohmann::json(RunConfig{}));
  EXPECT_EQ(c.data.episodes, 100u);
  EXPECT_EQ(c.data.train_episodes, 30u);
  EXPECT_EQ(c.trials, 40u);
  EXPECT_EQ(c.train.train_steps, 20000u);
  EXPECT_EQ(c.controller.control_hz, 20.0);
  EXPECT_EQ(c.cfil.mount_error.x, 0.0003);
}

TEST(RunConfig, RoundTripsThroughJson) {
  RunConfig c;
  c.trials = 7;
  c.master_seed = 99;
  c.sim.camera_size = 48;
  c.train.train_steps = 12;
  c.out_dir = "elsewhere";
  EXPECT_EQ(nlohmann::json(parse(nlohmann::json(c).dump())), nlohmann::json(c));
}

TEST(RunConfig, NestedObjectsMergeOverDefaults) {
  const RunConfig c = parse(R"({"sim": {"camera_size": 40}, "train": {"train_steps": 5}, "data": {"episodes": 12}})");
  EXPECT_EQ(c.sim.camera_size, 40u);
  EXPECT_EQ(c.sim.tactile_size, SimConfig{}.tactile_size);
  EXPECT_EQ(c.sim.dt_collect, SimConfig{}.dt_collect);
  EXPECT_EQ(c.train.train_steps, 5u);
  EXPECT_EQ(c.train.encoder_hidden, HyperParams{}.encoder_hidden);
  EXPECT_EQ(c.data.episodes, 12u);
  EXPECT_EQ(c.data.train_episodes, 30u);
}

TEST(RunConfig, UnknownKeysAreRejectedAtEveryLevel) {
  EXPECT_THROW(parse(R"({"trails": 3})"), ConfigError);
  EXPECT_THROW(parse(R"({"sim": {"camera": 3}})"), ConfigError);
  EXPECT_THROW(parse(R"({"data": {"episode": 3}})"), ConfigError);
  EXPECT_THROW(parse(R"({"train": {"steps": 3}})"), ConfigError);
  EXPECT_THROW(parse(R"({"controller": {"gain": 3}})"), ConfigError);
  EXPECT_THROW(parse(R"({"cfil": {"epochs": 3}})"), ConfigError);
}

TEST(RunConfig, WrongTypesAreRejected) {
  EXPECT_THROW(parse(R"({"trials": "many"})"), nlohmann::json::exception);
  EXPECT_THROW(parse(R"({"sim": {"camera_size": "big"}})"), nlohmann::json::exception);
}

TEST(LoadRunConfig, ReadsAFile) {
  const auto path = write_temp("tsnvae_cfg_ok.json", R"({"trials": 3, "out_dir": "x"})");
  const RunConfig c = load_run_config(path);
  EXPECT_EQ(c.trials, 3u);
  EXPECT_EQ(c.out_dir, "x");
  std::filesystem::remove(path);
}

TEST(LoadRunConfig, ErrorsNameTheFile) {
  const auto bad_json = write_temp("tsnvae_cfg_bad.json", "{ not json");
  const auto bad_key = write_temp("tsnvae_cfg_key.json", R"({"bogus": 1})");
  for (const auto& path : {bad_json, bad_key}) {
    try {
      load_run_config(path);
      FAIL() << "no error for " << path;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
  }
}

TEST(LoadRunConfig, MissingFileIsAnIoError) {
  EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), ContainerError);
}
