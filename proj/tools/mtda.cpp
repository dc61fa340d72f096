// Command-line front end: train variants from a config file, evaluate or
// export embeddings from saved checkpoints, and sweep config directories.

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtda/checkpoint.hpp"
#include "mtda/experiment.hpp"
#include "mtda/image_folder.hpp"

namespace {

namespace fs = std::filesystem;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
};

mtda::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
  mtda::ExperimentConfig cfg = mtda::ExperimentConfig::load(path);
  if (ov.seed) cfg.seeds = {*ov.seed};
  if (ov.out) cfg.out_dir = *ov.out;
  if (ov.variant) cfg.variant.variant = mtda::variant_from_name(*ov.variant);
  cfg.validate();
  return cfg;
}

mtda::MTDATask load_task(const mtda::ExperimentConfig& cfg) {
  return mtda::build_task(cfg, [](const mtda::ExperimentConfig& c) {
    return mtda::build_image_task(c.image_root, c.source_domain);
  });
}

int run_train(const std::string& config_path, const Overrides& ov) {
  mtda::ExperimentConfig cfg = load_config(config_path, ov);
  return mtda::run_experiment(cfg, std::cout, [](const mtda::ExperimentConfig& c) {
    return mtda::build_image_task(c.image_root, c.source_domain);
  });
}

int run_eval(const std::string& ckpt_path, const std::string& config_path,
             const Overrides& ov) {
  const mtda::ExperimentConfig cfg = load_config(config_path, ov);
  const mtda::MTDATask task = load_task(cfg);
  mtda::Checkpoint ckpt = mtda::load_checkpoint(ckpt_path);

  const mtda::EvalReport report = mtda::evaluate(ckpt.bundle, task);
  std::cout << std::fixed << std::setprecision(4);
  for (const mtda::DomainAccuracy& da : report.per_domain)
    std::cout << (da.domain_id == task.source.domain_id ? "source " : "target ")
              << std::left << std::setw(16) << da.name << " accuracy " << da.accuracy
              << "  (" << da.sample_count << " samples)\n";
  std::cout << "average over targets: " << report.average_target_accuracy << "\n";
  return 0;
}

int run_export(const std::string& ckpt_path, const std::string& config_path,
               const std::string& csv_path, const Overrides& ov) {
  const mtda::ExperimentConfig cfg = load_config(config_path, ov);
  const mtda::MTDATask task = load_task(cfg);
  mtda::Checkpoint ckpt = mtda::load_checkpoint(ckpt_path);
  mtda::export_embeddings(ckpt.bundle, task, csv_path);
  std::cout << "wrote " << csv_path << "\n";
  return 0;
}

int run_sweep(const std::string& dir, const Overrides& ov) {
  if (!fs::is_directory(dir)) {
    std::cerr << "error: '" << dir << "' is not a directory\n";
    return 1;
  }
  std::vector<fs::path> configs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".conf")
      configs.push_back(entry.path());
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) {
    std::cerr << "error: no .conf files under '" << dir << "'\n";
    return 1;
  }

  int failures = 0;
  std::vector<std::pair<std::string, nlohmann::json>> rows;
  for (const fs::path& path : configs) {
    std::cout << "=== " << path.filename().string() << " ===\n";
    try {
      mtda::ExperimentConfig cfg = load_config(path.string(), ov);
      const int status =
          mtda::run_experiment(cfg, std::cout, [](const mtda::ExperimentConfig& c) {
            return mtda::build_image_task(c.image_root, c.source_domain);
          });
      if (status != 0) {
        ++failures;
        continue;
      }
      std::ifstream summary(mtda::experiment_paths(cfg).summary);
      rows.emplace_back(path.filename().string(), nlohmann::json::parse(summary));
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      ++failures;
    }
  }

  if (!rows.empty()) {
    std::cout << "\nsweep summary (mean +/- std of average target accuracy):\n";
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& [name, summary] : rows)
      std::cout << "  " << std::left << std::setw(28) << name << " "
                << std::setw(24) << summary["variant"].get<std::string>()
                << summary["mean_average_target_accuracy"].get<double>() << " +/- "
                << summary["stddev_average_target_accuracy"].get<double>() << "\n";
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target domain adaptation trainer"};
  app.require_subcommand(1);

  Overrides ov;
  std::uint64_t seed_flag = 0;
  std::string out_flag, variant_flag;
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_flag, "Run only this seed")
        ->each([&](const std::string&) { ov.seed = seed_flag; });
    cmd->add_option("--out", out_flag, "Override the output directory")
        ->each([&](const std::string& v) { ov.out = v; });
    cmd->add_option("--variant", variant_flag,
                    "Override the training variant (source_only, adversarial, "
                    "adversarial_curriculum, graph_combined, graph_curriculum)")
        ->each([&](const std::string& v) { ov.variant = v; });
  };

  std::string config_path, ckpt_path, sweep_dir, csv_path = "embeddings.csv";

  CLI::App* train = app.add_subcommand("train", "Train per the config, write metrics");
  train->add_option("config", config_path, "Experiment config file")->required();
  add_overrides(train);

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the config's task");
  eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("config", config_path, "Experiment config file")->required();
  add_overrides(eval);

  CLI::App* exp = app.add_subcommand("export-embeddings",
                                     "Write eval-split feature vectors to CSV");
  exp->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  exp->add_option("config", config_path, "Experiment config file")->required();
  exp->add_option("--csv", csv_path, "Output CSV path");
  add_overrides(exp);

  CLI::App* sweep = app.add_subcommand("sweep", "Run every .conf file in a directory");
  sweep->add_option("dir", sweep_dir, "Directory of config files")->required();
  add_overrides(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(config_path, ov);
    if (eval->parsed()) return run_eval(ckpt_path, config_path, ov);
    if (exp->parsed()) return run_export(ckpt_path, config_path, csv_path, ov);
    if (sweep->parsed()) return run_sweep(sweep_dir, ov);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
