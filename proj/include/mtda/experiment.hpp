#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtda/checkpoint.hpp"
#include "mtda/config.hpp"
#include "mtda/curriculum.hpp"
#include "mtda/evaluate.hpp"

namespace mtda {

/// Builds the task an ExperimentConfig describes. Image-folder tasks need a
/// loader injected (the image decoder lives in a separate header so that
/// pure-vector builds stay free of it).
using ImageTaskLoader = std::function<MTDATask(const ExperimentConfig&)>;

inline MTDATask build_task(const ExperimentConfig& cfg,
                           const ImageTaskLoader& loader = nullptr) {
  if (cfg.task_kind == TaskKind::kSynthetic) return generate_synthetic_task(cfg.synthetic);
  if (!loader)
    throw ConfigError("experiment: image-folder tasks need the image loader "
                      "(run through the CLI)");
  return loader(cfg);
}

namespace detail {

inline nlohmann::json loss_curve_json(const std::vector<IterationLoss>& losses) {
  nlohmann::json curves;
  curves["classifier"] = nlohmann::json::array();
  curves["edge"] = nlohmann::json::array();
  curves["node"] = nlohmann::json::array();
  curves["adversarial"] = nlohmann::json::array();
  for (const IterationLoss& il : losses) {
    curves["classifier"].push_back(il.classifier);
    curves["edge"].push_back(il.edge);
    curves["node"].push_back(il.node);
    curves["adversarial"].push_back(il.adversarial);
  }
  return curves;
}

inline void write_line(std::ofstream& out, const nlohmann::json& record,
                       const std::string& what) {
  out << record.dump() << "\n";
  if (!out) throw IoError("experiment: failed writing " + what);
}

}  // namespace detail

/// One seed's final outcome, as appended to metrics.jsonl.
inline nlohmann::json metrics_record(const ExperimentConfig& cfg, std::uint64_t seed,
                                     int source_domain_id, const RunResult& run,
                                     const EvalReport& report) {
  nlohmann::json rec;
  rec["variant"] = variant_name(cfg.variant.variant);
  rec["seed"] = seed;
  rec["pretrain_iterations"] = run.history.pretrain_iterations;
  rec["source_accuracy"] = report.source_accuracy;
  nlohmann::json targets = nlohmann::json::object();
  for (const DomainAccuracy& da : report.per_domain)
    if (da.domain_id != source_domain_id) targets[da.name] = da.accuracy;
  rec["accuracy"] = targets;
  rec["average_target_accuracy"] = report.average_target_accuracy;
  rec["pseudo_labels_total"] = run.history.all_records.size();
  nlohmann::json counts = nlohmann::json::array();
  for (const StageRecord& s : run.history.stages)
    if (s.step >= 0) counts.push_back(s.accepted_count);
  rec["pseudo_labels_per_step"] = counts;
  return rec;
}

struct ExperimentPaths {
  std::filesystem::path variant_dir;
  std::filesystem::path metrics;
  std::filesystem::path summary;
  std::filesystem::path seed_dir(std::uint64_t seed) const {
    return variant_dir / std::to_string(seed);
  }
};

inline ExperimentPaths experiment_paths(const ExperimentConfig& cfg) {
  ExperimentPaths p;
  p.variant_dir = std::filesystem::path(cfg.out_dir) / variant_name(cfg.variant.variant);
  p.metrics = p.variant_dir / "metrics.jsonl";
  p.summary = p.variant_dir / "summary.json";
  return p;
}

/// Runs every configured seed sequentially: build task, train the variant,
/// evaluate, append one metrics record; then writes a mean/std summary.
/// Outputs under `<out>/<variant>/`: metrics.jsonl (one record per seed),
/// summary.json, and per seed a state log, per-stage checkpoints, and
/// final.ckpt. Returns 0 on success, 1 after printing a diagnostic.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log,
                          const ImageTaskLoader& loader = nullptr) {
  try {
    cfg.validate();
    const MTDATask task = build_task(cfg, loader);

    ArchitectureConfig arch = cfg.arch;
    if (cfg.task_kind == TaskKind::kImageFolder) arch.n_classes = task.n_classes;

    const ExperimentPaths paths = experiment_paths(cfg);
    std::filesystem::create_directories(paths.variant_dir);
    std::ofstream metrics(paths.metrics, std::ios::trunc);
    if (!metrics) throw IoError("experiment: cannot open " + paths.metrics.string());

    std::vector<double> averages;
    std::vector<nlohmann::json> final_records;
    for (const std::uint64_t seed : cfg.seeds) {
      const auto seed_dir = paths.seed_dir(seed);
      std::filesystem::create_directories(seed_dir);
      std::ofstream state_log(seed_dir / "state.jsonl", std::ios::trunc);
      if (!state_log) throw IoError("experiment: cannot open the state log");

      const auto on_stage = [&](ModelBundle& model, Rng& rng, const StageRecord& rec,
                                const CurriculumState& state) {
        nlohmann::json line;
        line["step"] = rec.step;
        line["selected_domain"] = rec.selected_domain;
        nlohmann::json entropies = nlohmann::json::object();
        for (const auto& [id, h] : rec.entropies) entropies[std::to_string(id)] = h;
        line["entropies"] = entropies;
        line["accepted"] = rec.accepted_count;
        line["mean_confidence"] = rec.mean_confidence;
        line["pseudo_source_size"] = rec.pseudo_source_size;
        line["remaining_domains"] = state.remaining_domains;
        line["losses"] = detail::loss_curve_json(rec.losses);
        detail::write_line(state_log, line, "the state log");

        const std::string name =
            rec.step >= 0 ? "step_" + std::to_string(rec.step) + ".ckpt" : "final.ckpt";
        save_checkpoint((seed_dir / name).string(), model, rng);
      };

      log << "[" << variant_name(cfg.variant.variant) << " seed " << seed
          << "] training...\n";
      RunResult run = run_variant(task, arch, cfg.variant, seed, on_stage);
      // Variants that end without a fine-tuning marker still checkpoint here.
      save_checkpoint((seed_dir / "final.ckpt").string(), run.model, run.rng);

      const EvalReport report = evaluate(run.model, task);
      nlohmann::json rec = metrics_record(cfg, seed, task.source.domain_id, run, report);
      detail::write_line(metrics, rec, "metrics");
      final_records.push_back(std::move(rec));
      averages.push_back(report.average_target_accuracy);
      log << "  average target accuracy " << std::fixed << std::setprecision(4)
          << report.average_target_accuracy << "\n";
      log.unsetf(std::ios::floatfield);
    }

    double mean = 0.0;
    for (double a : averages) mean += a;
    mean /= static_cast<double>(averages.size());
    double var = 0.0;
    for (double a : averages) var += (a - mean) * (a - mean);
    const double stddev =
        averages.size() > 1 ? std::sqrt(var / static_cast<double>(averages.size() - 1)) : 0.0;

    nlohmann::json summary;
    summary["variant"] = variant_name(cfg.variant.variant);
    summary["seeds"] = cfg.seeds;
    summary["mean_average_target_accuracy"] = mean;
    summary["stddev_average_target_accuracy"] = stddev;
    nlohmann::json domain_means = nlohmann::json::object();
    for (const auto& rec : final_records)
      for (const auto& [name, acc] : rec["accuracy"].items())
        domain_means[name] = domain_means.value(name, 0.0) + acc.get<double>();
    for (auto& [name, total] : domain_means.items())
      total = total.get<double>() / static_cast<double>(final_records.size());
    summary["mean_accuracy_per_domain"] = domain_means;

    std::ofstream summary_out(paths.summary, std::ios::trunc);
    if (!summary_out) throw IoError("experiment: cannot open the summary file");
    summary_out << summary.dump(2) << "\n";
    if (!summary_out) throw IoError("experiment: failed writing the summary");

    log << "summary: " << variant_name(cfg.variant.variant) << " mean "
        << std::fixed << std::setprecision(4) << mean << " +/- " << stddev << " over "
        << cfg.seeds.size() << " seed(s)\n";
    log.unsetf(std::ios::floatfield);
    return 0;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mtda
