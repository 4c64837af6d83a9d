// tsnvae: collect, train, eval, control, bench, plot.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "CLI11.hpp"
#include "tsnvae/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

using namespace tsnvae;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// Caps worker threads. All stages currently run on one thread, so this only
// validates the value.
std::size_t thread_cap() {
  const char* env = std::getenv("TSNVAE_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("TSNVAE_THREADS must be a positive integer, got \"" + std::string(env) + "\"");
  return static_cast<std::size_t>(n);
}

std::vector<EpisodeRecord> validation_episodes(const Dataset& ds) {
  std::vector<EpisodeRecord> out;
  for (std::size_t i = 0; i < ds.episodes.size(); ++i)
    if (i < ds.manifest.split.size() && ds.manifest.split[i] == "validation") out.push_back(ds.episodes[i]);
  return out.empty() ? ds.episodes : out;
}

std::vector<EpisodeRecord> training_episodes(const Dataset& ds) {
  std::vector<EpisodeRecord> out;
  for (std::size_t i = 0; i < ds.episodes.size(); ++i)
    if (i >= ds.manifest.split.size() || ds.manifest.split[i] == "train") out.push_back(ds.episodes[i]);
  return out;
}

void print_metrics(const LatentMap& map) {
  nlohmann::json j = summarize_map("", map);
  j.erase("method");
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile-sensitive NewtonianVAE desk-scale lab"};
  app.set_help_all_flag("--help-all", "Show help for all subcommands");
  std::string config_path;
  bool print_config = false;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration (defaults apply for missing keys)");
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  app.add_option("--seed", seed, "Master seed (overrides the config)");

  auto* collect = app.add_subcommand("collect", "Collect random-action episodes");
  std::size_t episodes = 0;
  std::string out_path;
  collect->add_option("--episodes", episodes, "Number of episodes")->required()->check(CLI::PositiveNumber);
  collect->add_option("--out", out_path, "Dataset file")->required();

  auto* train_cmd = app.add_subcommand("train", "Train one model variant");
  std::string data_path, variant_tag_s = "TS-NVAE", ckpt_path;
  std::optional<std::size_t> steps;
  train_cmd->add_option("--data", data_path, "Dataset file")->required();
  train_cmd->add_option("--variant", variant_tag_s, "Variant tag");
  train_cmd->add_option("--steps", steps, "Training steps");
  train_cmd->add_option("--out", ckpt_path, "Checkpoint file")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Latent-map metrics on the validation split");
  std::string plot_path;
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_path, "Dataset file")->required();
  eval_cmd->add_option("--plot", plot_path, "Write the latent map as SVG");

  auto* control_cmd = app.add_subcommand("control", "Closed-loop positioning trials");
  std::optional<std::size_t> trials;
  std::string report_stem;
  control_cmd->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  control_cmd->add_option("--trials", trials, "Number of paired trials")->check(CLI::PositiveNumber);
  control_cmd->add_option("--report", report_stem, "Write <stem>.json and <stem>.txt");

  auto* bench_cmd = app.add_subcommand("bench", "Full benchmark: every variant and the regression baselines");
  std::string suite = "all", ckpt_dir, out_dir;
  bench_cmd->add_option("--suite", suite, "Which methods to run")->check(CLI::IsMember({"all", "nvae", "cfil"}));
  bench_cmd->add_option("--trials", trials, "Number of paired trials")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--data", data_path, "Reuse a collected dataset");
  bench_cmd->add_option("--ckpt-dir", ckpt_dir, "Reuse checkpoints from a previous bench run");
  bench_cmd->add_option("--out-dir", out_dir, "Artifact directory");
  bench_cmd->add_option("--steps", steps, "Training steps per variant");

  auto* plot_cmd = app.add_subcommand("plot", "Latent map SVG for a checkpoint");
  plot_cmd->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  plot_cmd->add_option("--data", data_path, "Dataset file (default: collect validation episodes)");
  plot_cmd->add_option("--out", plot_path, "SVG file (default: <ckpt>.svg)");

  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    thread_cap();
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (seed) cfg.master_seed = *seed;
    if (steps) cfg.train.train_steps = *steps;
    if (trials) cfg.trials = *trials;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (print_config) {
      std::cout << nlohmann::json(cfg).dump(2) << '\n';
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 1;
    }

    if (*collect) {
      const auto eps = collect_dataset(cfg.sim, episodes, derive_seed(cfg.master_seed, "collect"), cfg.data.horizon);
      const std::size_t n_train = std::min(cfg.data.train_episodes, eps.size());
      const Split split = split_dataset(eps, n_train, derive_seed(cfg.master_seed, "split"));
      save_dataset(eps, cfg.sim, out_path, split.labels);
      std::size_t transitions = 0;
      for (const auto& e : split.train) transitions += e.horizon();
      std::cout << "wrote " << eps.size() << " episodes (" << transitions << " training transitions) to " << out_path
                << '\n';
    } else if (*train_cmd) {
      const Variant v = parse_variant(variant_tag_s);
      const Dataset ds = load_dataset(data_path);
      const HyperParams hp = variant_hyperparams(cfg.train, v);
      const auto res = train(training_episodes(ds), hp, derive_seed(cfg.master_seed, "train"), [](std::size_t s, double l) {
        if ((s + 1) % 1000 == 0) log_line("step " + std::to_string(s + 1) + " loss " + std::to_string(l));
      });
      save_checkpoint(res.bundle, ckpt_path);
      std::cout << "wrote " << ckpt_path << " (final loss " << res.losses.back() << ")\n";
    } else if (*eval_cmd) {
      const ModelBundle m = load_checkpoint(ckpt_path);
      const LatentMap map = latent_map(m, validation_episodes(load_dataset(data_path)));
      print_metrics(map);
      if (!plot_path.empty()) export_latent_map(map, plot_path, std::string(variant_tag(m.hp.variant)));
    } else if (*control_cmd) {
      const ModelBundle m = load_checkpoint(ckpt_path);
      const Env env(cfg.sim);
      BenchmarkReport rep;
      rep.rows.push_back(run_trials(std::string(variant_tag(m.hp.variant)), bundle_seam(m, env), cfg.sim, cfg.controller,
                                    cfg.trials, derive_seed(cfg.master_seed, "trials")));
      rep.config_fingerprint = std::to_string(fnv1a(nlohmann::json{{"sim", cfg.sim}, {"controller", cfg.controller}}.dump()));
      std::cout << format_table(rep);
      if (!report_stem.empty()) export_report(rep, report_stem);
    } else if (*bench_cmd) {
      PipelineOptions opt;
      if (suite == "cfil") opt.variants.clear();
      if (suite == "nvae") opt.run_cfil = false;
      if (!data_path.empty()) opt.data_path = data_path;
      if (!ckpt_dir.empty()) opt.ckpt_dir = ckpt_dir;
      const PipelineResult res = run_pipeline(cfg, opt, log_line);
      std::cout << format_table(res.report);
      std::cout << "artifacts in " << cfg.out_dir << '\n';
    } else if (*plot_cmd) {
      const ModelBundle m = load_checkpoint(ckpt_path);
      std::vector<EpisodeRecord> val;
      if (!data_path.empty()) {
        val = validation_episodes(load_dataset(data_path));
      } else {
        val = collect_dataset(cfg.sim, cfg.data.episodes - cfg.data.train_episodes, derive_seed(cfg.master_seed, "plot"),
                              cfg.data.horizon);
      }
      const LatentMap map = latent_map(m, val);
      const std::string path = plot_path.empty() ? ckpt_path + ".svg" : plot_path;
      export_latent_map(map, path, std::string(variant_tag(m.hp.variant)));
      std::cout << "wrote " << path << '\n';
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
