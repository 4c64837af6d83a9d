#pragma once

// Episode collection (random walk starting at the insertion position) and the
// on-disk dataset container.

#include "tsnvae/io.hpp"
#include "tsnvae/rng.hpp"
#include "tsnvae/sim.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tsnvae {

struct Frame {
  Image camera;
  Vec2 action;  // commanded velocity, m/s

  friend bool operator==(const Frame&, const Frame&) = default;
};

// Ground truth for evaluation and supervised baselines. Never consumed by the
// world-model losses.
struct EpisodeTruth {
  std::vector<Vec2> ee_pos;  // one per frame
  Vec2 insertion_position;
  Vec2 grasp_offset;
  double tilt = 0.0;

  friend bool operator==(const EpisodeTruth&, const EpisodeTruth&) = default;
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  Image tactile;            // I_z
  Image goal;               // I_0, used as I_g
  std::vector<Frame> frames;
  EpisodeTruth truth;

  std::size_t horizon() const { return frames.size(); }
  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

inline constexpr std::size_t kDefaultHorizon = 20;

inline EpisodeRecord collect_episode(Env& env, std::uint64_t seed, std::size_t horizon = kDefaultHorizon) {
  const double dt = env.config().dt_collect;
  const double lim = env.config().action_limit;
  WorldState s = env.reset(seed);
  Rng actions = make_rng(derive_seed(seed, "actions"));
  std::uniform_real_distribution<double> act(-lim, lim);

  EpisodeRecord ep;
  ep.seed = seed;
  ep.tactile = env.render_tactile(s);
  ep.goal = env.render_camera(s);
  ep.truth.insertion_position = env.insertion_position(s);
  ep.truth.grasp_offset = s.grasp_offset;
  ep.truth.tilt = s.tilt;
  ep.frames.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const Vec2 u{act(actions), act(actions)};
    ep.frames.push_back({t == 0 ? ep.goal : env.render_camera(s), u});
    ep.truth.ee_pos.push_back(s.ee_pos);
    s = env.step(s, u, dt);
  }
  return ep;
}

// Episode i uses seed derive_seed(master, "episode", i).
inline std::vector<EpisodeRecord> collect_dataset(const SimConfig& cfg, std::size_t count, std::uint64_t master,
                                                  std::size_t horizon = kDefaultHorizon) {
  std::vector<EpisodeRecord> out;
  out.reserve(count);
  Env env(cfg);
  for (std::size_t i = 0; i < count; ++i) out.push_back(collect_episode(env, derive_seed(master, "episode", i), horizon));
  return out;
}

struct DatasetManifest {
  static constexpr std::uint32_t kVersion = 1;
  std::size_t episode_count = 0;
  std::size_t horizon = 0;
  double dt = 0.0;
  std::uint64_t sim_config_hash = 0;
  std::vector<std::string> split;  // "train" or "validation" per episode
  std::uint32_t format_version = kVersion;
  SimConfig sim;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<EpisodeRecord> episodes;
};

inline std::uint64_t sim_config_hash(const SimConfig& cfg) { return fnv1a(nlohmann::json(cfg).dump()); }

inline constexpr std::string_view kDatasetMagic = "TSNV";

// Training block (images, actions) precedes a separate evaluation block
// (truth poses) in the payload.
inline std::vector<std::uint8_t> encode_dataset(const std::vector<EpisodeRecord>& eps, const SimConfig& cfg,
                                                std::vector<std::string> split = {}) {
  if (split.empty()) split.assign(eps.size(), "train");
  if (split.size() != eps.size()) throw std::invalid_argument("save_dataset: split labels do not match episode count");
  const std::size_t horizon = eps.empty() ? 0 : eps.front().horizon();
  nlohmann::json header;
  header["format_version"] = DatasetManifest::kVersion;
  header["episode_count"] = eps.size();
  header["horizon"] = horizon;
  header["dt"] = cfg.dt_collect;
  header["sim_config_hash"] = sim_config_hash(cfg);
  header["sim_config"] = cfg;
  header["split"] = split;
  std::vector<std::uint64_t> seeds;
  for (const auto& e : eps) seeds.push_back(e.seed);
  header["episode_seeds"] = seeds;
  header["camera_shape"] = {cfg.camera_size, cfg.camera_size, 3};
  header["tactile_shape"] = {cfg.tactile_size, cfg.tactile_size, 3};

  ByteWriter w;
  for (const auto& e : eps) {
    if (e.horizon() != horizon) throw std::invalid_argument("save_dataset: episodes have differing horizons");
    w.put_u8_image(e.tactile.data);
    w.put_u8_image(e.goal.data);
    for (const auto& f : e.frames) {
      w.put_u8_image(f.camera.data);
      w.put(f.action.x);
      w.put(f.action.y);
    }
  }
  header["eval_block_offset"] = w.bytes().size();
  for (const auto& e : eps) {
    for (const auto& p : e.truth.ee_pos) {
      w.put(p.x);
      w.put(p.y);
    }
    w.put(e.truth.insertion_position.x);
    w.put(e.truth.insertion_position.y);
    w.put(e.truth.grasp_offset.x);
    w.put(e.truth.grasp_offset.y);
    w.put(e.truth.tilt);
  }
  return pack_container(kDatasetMagic, DatasetManifest::kVersion, std::move(header), w.bytes());
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  Container c = unpack_container(kDatasetMagic, DatasetManifest::kVersion, bytes);
  Dataset ds;
  auto& m = ds.manifest;
  try {
    m.episode_count = c.header.at("episode_count").get<std::size_t>();
    m.horizon = c.header.at("horizon").get<std::size_t>();
    m.dt = c.header.at("dt").get<double>();
    m.sim_config_hash = c.header.at("sim_config_hash").get<std::uint64_t>();
    m.split = c.header.at("split").get<std::vector<std::string>>();
    m.sim = c.header.at("sim_config").get<SimConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerError::Kind::Malformed, std::string("dataset manifest: ") + e.what());
  }
  const auto seeds = c.header.at("episode_seeds").get<std::vector<std::uint64_t>>();
  const auto cam = c.header.at("camera_shape").get<std::vector<std::size_t>>();
  const auto tac = c.header.at("tactile_shape").get<std::vector<std::size_t>>();
  ByteReader r(c.payload.data(), c.payload.size());
  ds.episodes.resize(m.episode_count);
  for (std::size_t i = 0; i < m.episode_count; ++i) {
    auto& e = ds.episodes[i];
    e.seed = seeds.at(i);
    e.tactile = Image(tac[0], tac[1], tac[2]);
    r.get_u8_image(e.tactile.data);
    e.goal = Image(cam[0], cam[1], cam[2]);
    r.get_u8_image(e.goal.data);
    e.frames.resize(m.horizon);
    for (auto& f : e.frames) {
      f.camera = Image(cam[0], cam[1], cam[2]);
      r.get_u8_image(f.camera.data);
      f.action.x = r.get<double>();
      f.action.y = r.get<double>();
    }
  }
  for (auto& e : ds.episodes) {
    e.truth.ee_pos.resize(m.horizon);
    for (auto& p : e.truth.ee_pos) p = {r.get<double>(), r.get<double>()};
    e.truth.insertion_position = {r.get<double>(), r.get<double>()};
    e.truth.grasp_offset = {r.get<double>(), r.get<double>()};
    e.truth.tilt = r.get<double>();
  }
  return ds;
}

inline void save_dataset(const std::vector<EpisodeRecord>& eps, const SimConfig& cfg, const std::string& path,
                         std::vector<std::string> split = {}) {
  write_file(path, encode_dataset(eps, cfg, std::move(split)));
}

inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

struct Split {
  std::vector<EpisodeRecord> train;
  std::vector<EpisodeRecord> validation;
  std::vector<std::string> labels;  // "train" or "validation" per input episode
};

// Deterministic disjoint split; each side keeps the original episode order.
inline Split split_dataset(const std::vector<EpisodeRecord>& eps, std::size_t train_count, std::uint64_t seed) {
  if (train_count > eps.size())
    throw std::invalid_argument("split_dataset: train_count " + std::to_string(train_count) + " exceeds " +
                                std::to_string(eps.size()) + " episodes");
  std::vector<std::size_t> idx(eps.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(derive_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> is_train(eps.size(), false);
  for (std::size_t k = 0; k < train_count; ++k) is_train[idx[k]] = true;
  Split s;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    (is_train[i] ? s.train : s.validation).push_back(eps[i]);
    s.labels.push_back(is_train[i] ? "train" : "validation");
  }
  return s;
}

}  // namespace tsnvae
