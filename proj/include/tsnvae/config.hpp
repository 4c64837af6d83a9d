#pragma once

// Top-level run configuration. Every field has a default; unknown keys are
// rejected at every level.

#include "tsnvae/cfil.hpp"
#include "tsnvae/controller.hpp"
#include "tsnvae/io.hpp"
#include "tsnvae/model.hpp"
#include "tsnvae/sim.hpp"

#include <cstdint>
#include <string>

namespace tsnvae {

struct DataConfig {
  std::size_t episodes = 100;       // collected in total
  std::size_t train_episodes = 30;  // the rest is validation
  std::size_t horizon = kDefaultHorizon;
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"episodes", c.episodes}, {"train_episodes", c.train_episodes}, {"horizon", c.horizon}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  require_known_keys(j, {"episodes", "train_episodes", "horizon"}, "data");
  read_if(j, "episodes", c.episodes);
  read_if(j, "train_episodes", c.train_episodes);
  read_if(j, "horizon", c.horizon);
}

struct RunConfig {
  SimConfig sim;
  DataConfig data;
  HyperParams train;  // variant field is overridden per run
  ControllerConfig controller;
  CfilConfig cfil{.mount_error = {0.0003, 0.0}};
  std::size_t trials = 40;
  std::uint64_t master_seed = 1;
  std::string out_dir = "tsnvae_out";
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"sim", c.sim},
       {"data", c.data},
       {"train", c.train},
       {"controller", c.controller},
       {"cfil", c.cfil},
       {"trials", c.trials},
       {"master_seed", c.master_seed},
       {"out_dir", c.out_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  require_known_keys(j, {"sim", "data", "train", "controller", "cfil", "trials", "master_seed", "out_dir"}, "config");
  // Nested objects merge over the defaults already in `c`.
  if (j.contains("sim")) {
    nlohmann::json merged = c.sim;
    merged.merge_patch(j.at("sim"));
    c.sim = merged.get<SimConfig>();
  }
  if (j.contains("data")) {
    nlohmann::json merged = c.data;
    merged.merge_patch(j.at("data"));
    c.data = merged.get<DataConfig>();
  }
  if (j.contains("train")) {
    nlohmann::json merged = c.train;
    merged.merge_patch(j.at("train"));
    c.train = merged.get<HyperParams>();
  }
  if (j.contains("controller")) {
    nlohmann::json merged = c.controller;
    merged.merge_patch(j.at("controller"));
    c.controller = merged.get<ControllerConfig>();
  }
  if (j.contains("cfil")) {
    nlohmann::json merged = c.cfil;
    merged.merge_patch(j.at("cfil"));
    c.cfil = merged.get<CfilConfig>();
  }
  read_if(j, "trials", c.trials);
  read_if(j, "master_seed", c.master_seed);
  read_if(j, "out_dir", c.out_dir);
}

// Parses a JSON config file over the defaults.
inline RunConfig load_run_config(const std::string& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    RunConfig c;
    from_json(j, c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace tsnvae
