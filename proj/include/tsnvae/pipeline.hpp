#pragma once

// End-to-end experiment: collect, split, train every variant, evaluate the
// latent maps, run the paired control benchmark and the regression baselines,
// and write every artifact under one directory.

#include "tsnvae/cfil.hpp"
#include "tsnvae/checkpoint.hpp"
#include "tsnvae/config.hpp"
#include "tsnvae/controller.hpp"
#include "tsnvae/dataset.hpp"
#include "tsnvae/eval.hpp"
#include "tsnvae/report.hpp"
#include "tsnvae/train.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tsnvae {

// Hyperparameters for one variant on top of the configured base.
inline HyperParams variant_hyperparams(HyperParams base, Variant v) {
  base.variant = v;
  if (v == Variant::TsNvaeSigmaX1) base.sigma_x = 1.0;
  return base;
}

// File-name form of a variant tag.
inline std::string file_stem(std::string_view tag) {
  std::string s(tag);
  for (auto& c : s)
    if (c == '/' || c == '+' || c == '=') c = '_';
  return s;
}

struct VariantMetrics {
  std::string method;
  std::array<double, 2> r{};
  std::array<double, 2> slope{};
  double correlation = 0.0;     // weakest-axis |r|
  double goal_placement = 0.0;  // latent units
  bool has_goal = false;
};

inline void to_json(nlohmann::json& j, const VariantMetrics& m) {
  j = {{"method", m.method}, {"r", m.r}, {"slope", m.slope}, {"correlation", m.correlation}};
  if (m.has_goal) j["goal_placement"] = m.goal_placement;
}

inline VariantMetrics summarize_map(std::string method, const LatentMap& map) {
  VariantMetrics v;
  v.method = std::move(method);
  v.r = map.metrics.r;
  v.slope = map.metrics.slope;
  v.correlation = map.metrics.statistic();
  v.has_goal = !map.goal_predicted.empty();
  v.goal_placement = map.goal_placement_error();
  return v;
}

struct PipelineResult {
  BenchmarkReport report;
  std::vector<VariantMetrics> metrics;
  std::optional<LocalizationErrors> localization;
};

using LogFn = std::function<void(const std::string&)>;

struct PipelineOptions {
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  bool run_cfil = true;
  std::optional<std::string> data_path;  // reuse a collected dataset
  std::optional<std::string> ckpt_dir;   // reuse trained checkpoints named <stem>.ckpt
};

inline Dataset obtain_dataset(const RunConfig& cfg, const PipelineOptions& opt) {
  if (opt.data_path) return load_dataset(*opt.data_path);
  Dataset ds;
  ds.manifest.sim = cfg.sim;
  ds.episodes = collect_dataset(cfg.sim, cfg.data.episodes, derive_seed(cfg.master_seed, "collect"), cfg.data.horizon);
  return ds;
}

inline PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opt = {}, const LogFn& log = {}) {
  namespace fs = std::filesystem;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "maps");

  const Dataset ds = obtain_dataset(cfg, opt);
  const SimConfig& sim = ds.manifest.sim;
  const Split split = split_dataset(ds.episodes, cfg.data.train_episodes, derive_seed(cfg.master_seed, "split"));
  if (!opt.data_path) save_dataset(ds.episodes, sim, (out / "dataset.tsnv").string(), split.labels);
  say("dataset: " + std::to_string(split.train.size()) + " training / " + std::to_string(split.validation.size()) +
      " validation episodes");

  PipelineResult res;
  const std::uint64_t train_seed = derive_seed(cfg.master_seed, "train");
  const std::uint64_t trial_master = derive_seed(cfg.master_seed, "trials");
  for (Variant v : opt.variants) {
    const std::string tag(variant_tag(v));
    const fs::path ckpt = out / "checkpoints" / (file_stem(tag) + ".ckpt");
    ModelBundle m;
    if (opt.ckpt_dir) {
      m = load_checkpoint((fs::path(*opt.ckpt_dir) / (file_stem(tag) + ".ckpt")).string());
    } else {
      const HyperParams hp = variant_hyperparams(cfg.train, v);
      say("training " + tag + " for " + std::to_string(hp.train_steps) + " steps");
      m = train(split.train, hp, train_seed,
                [&](std::size_t step, double loss) {
                  if ((step + 1) % 1000 == 0) say("  " + tag + " step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
                })
              .bundle;
      save_checkpoint(m, ckpt.string());
    }
    const LatentMap map = latent_map(m, split.validation);
    export_latent_map(map, (out / "maps" / (file_stem(tag) + ".svg")).string(), tag);
    res.metrics.push_back(summarize_map(tag, map));
    const Env env(sim);
    res.report.rows.push_back(run_trials(tag, bundle_seam(m, env), sim, cfg.controller, cfg.trials, trial_master));
    say(tag + ": " + format_success(res.report.rows.back()) + ", " + format_accuracy(res.report.rows.back()) + " mm");
  }

  if (opt.run_cfil) {
    const fs::path ckpt = out / "checkpoints" / "CFIL.ckpt";
    CfilParams p;
    if (opt.ckpt_dir && fs::exists(fs::path(*opt.ckpt_dir) / "CFIL.ckpt")) {
      p = load_cfil((fs::path(*opt.ckpt_dir) / "CFIL.ckpt").string());
    } else {
      say("training CFIL regressors");
      p = train_cfil(split.train, sim, cfg.cfil, derive_seed(cfg.master_seed, "cfil"));
      save_cfil(p, ckpt.string());
    }
    for (CfilMethod meth : {CfilMethod::Plain, CfilMethod::Template, CfilMethod::TactileCnn}) {
      res.report.rows.push_back(run_cfil_trials(p, sim, cfg.controller, meth, cfg.trials, trial_master));
      say(res.report.rows.back().method + ": " + format_success(res.report.rows.back()) + ", " +
          format_accuracy(res.report.rows.back()) + " mm");
    }
    res.localization = grasp_localization_errors(p, sim, 7, 0.0025, derive_seed(cfg.master_seed, "grid"));
  }

  sort_rows(res.report.rows);
  RunConfig fp = cfg;
  fp.out_dir.clear();  // artifacts must not depend on where they are written
  res.report.config_fingerprint = std::to_string(fnv1a(nlohmann::json(fp).dump()));
  export_report(res.report, (out / "report").string());
  nlohmann::json mj = {{"variants", res.metrics}};
  if (res.localization)
    mj["grasp_localization"] = {{"template_mean", res.localization->template_mean},
                                {"regressor_mean", res.localization->regressor_mean}};
  const std::string text = mj.dump(2) + "\n";
  write_file((out / "metrics.json").string(), std::vector<std::uint8_t>(text.begin(), text.end()));
  return res;
}

}  // namespace tsnvae
