// egl: command-line front end for data generation, training, evaluation,
// sweeps and the randomized-alignment ablation.
//
// Exit codes: 0 success, 2 config error, 3 data-format error, 4 training
// divergence, 5 undefined-metric condition, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "egl/checkpoint.hpp"
#include "egl/config_io.hpp"
#include "egl/dataset_io.hpp"
#include "egl/experiment.hpp"
#include "egl/report_io.hpp"
#include "egl/synthdata.hpp"
#include "egl/train.hpp"

namespace fs = std::filesystem;
using namespace egl;

namespace {

ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : read_experiment_config(path);
}

Dataset load_or_generate(const std::string& data_dir, const ExperimentConfig& cfg) {
  if (!data_dir.empty()) return read_dataset(data_dir);
  return generate(cfg.data);
}

void write_split_csv(std::string& out, const char* split, const FairnessReport& fr) {
  for (const auto& [group, ms] : fr.per_subgroup) {
    for (const auto& m : metric_names()) {
      if (auto v = metric_value(ms, m)) {
        out += std::string(split) + "," + to_string(fr.grouping) + "," + group + "," + m + "," + format_real(*v) + "\n";
      }
    }
  }
  for (const auto& [m, v] : fr.gaps) {
    if (v) out += std::string(split) + "," + to_string(fr.grouping) + ",gap," + m + "," + format_real(*v) + "\n";
  }
}

int cmd_generate(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(config_path);
  const Dataset data = generate(cfg.data);
  write_dataset(data, out_dir, cfg.data);

  Json summary = Json::object();
  std::string csv = "split,stat,value\n";
  const char* names[] = {"train", "val", "test_id", "test_ood"};
  const SampleSet* sets[] = {&data.train, &data.val, &data.test_id, &data.test_ood};
  for (int k = 0; k < 4; ++k) {
    Json s = {{"count", sets[k]->size()}};
    const auto cells = subgroup_counts(*sets[k]);
    s["subgroup_counts"] = {{"female_young", cells[0]}, {"female_old", cells[1]}, {"male_young", cells[2]},
                            {"male_old", cells[3]}};
    Json corr = Json::array();
    for (std::size_t c = 0; c < cfg.data.classes; ++c) {
      const double r = marker_label_correlation(*sets[k], c);
      corr.push_back(r);
      csv += std::string(names[k]) + ",marker_label_corr_class" + std::to_string(c) + "," + format_real(r) + "\n";
    }
    s["marker_label_correlation"] = corr;
    csv += std::string(names[k]) + ",count," + std::to_string(sets[k]->size()) + "\n";
    summary[names[k]] = s;
  }
  bytes::write_text(fs::path(out_dir) / "config_echo.json", to_json(cfg).dump(2) + "\n");
  bytes::write_text(fs::path(out_dir) / "report.json", summary.dump(2) + "\n");
  bytes::write_text(fs::path(out_dir) / "report.csv", csv);
  std::cerr << "wrote dataset to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, int level, const std::string& mode,
              int ratio, std::uint64_t seed, const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  const LoadedDataset loaded = read_dataset_with_manifest(data_dir);
  TrainConfig t = cfg.train;
  t.alignment_level = level;
  t.alignment_mode = parse_alignment_mode(mode);
  t.data_ratio = ratio;
  t.seed = seed;
  const TrainOutput out = train(cfg.model, t, loaded.data);

  fs::create_directories(out_dir);
  write_checkpoint(fs::path(out_dir) / "model.ckpt", cfg.model, out.params);
  Json echo = to_json(cfg);
  echo["train"] = to_json(t);
  echo["data_dir"] = data_dir;
  bytes::write_text(fs::path(out_dir) / "config_echo.json", echo.dump(2) + "\n");
  bytes::write_text(fs::path(out_dir) / "report.json", to_json(out.result).dump(2) + "\n");
  std::string csv = "split,grouping,subgroup,metric,value\n";
  write_split_csv(csv, "id", out.result.test_id.by_sex);
  write_split_csv(csv, "id", out.result.test_id.by_age);
  write_split_csv(csv, "ood", out.result.test_ood.by_sex);
  write_split_csv(csv, "ood", out.result.test_ood.by_age);
  bytes::write_text(fs::path(out_dir) / "report.csv", csv);
  std::cerr << "best val AUC " << out.result.best_val_auc << " after " << out.result.epochs_trained << " epochs\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_dir, const std::string& split,
                 const std::string& group, const std::string& out_path, double threshold) {
  if (split != "id" && split != "ood") throw ConfigError("--split must be id or ood");
  if (group != "sex" && group != "age") throw ConfigError("--group must be sex or age");
  const Checkpoint ck = read_checkpoint(model_path);
  const Dataset data = read_dataset(data_dir);
  const SampleSet& samples = split == "id" ? data.test_id : data.test_ood;
  const auto records = evaluate_samples(ck.config, ck.params, samples);
  const FairnessReport rep =
      fairness_report(records, group == "sex" ? Grouping::sex : Grouping::age_group, threshold);

  const fs::path out(out_path);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  Json j = to_json(rep);
  j["split"] = split;
  j["threshold"] = threshold;
  j["overall"] = to_json(compute_metric_set(records, threshold));
  bytes::write_text(out, j.dump(2) + "\n");
  bytes::write_text(dir / "config_echo.json",
                    Json{{"model", model_path}, {"data", data_dir}, {"split", split}, {"group", group},
                         {"threshold", threshold}, {"model_config", to_json(ck.config)}}
                            .dump(2) + "\n");
  std::string csv = "split,grouping,subgroup,metric,value\n";
  write_split_csv(csv, split.c_str(), rep);
  bytes::write_text(dir / "report.csv", csv);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& data_dir, const std::string& kind,
              const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  if (!seeds.empty()) cfg.seeds = seeds;
  const Dataset data = load_or_generate(data_dir, cfg);
  const std::size_t workers = workers_from_env();
  SweepReport rep;
  if (kind == "alignment") {
    rep = sweep_alignment(cfg.model, cfg.train, data, cfg.levels, cfg.seeds, workers);
  } else if (kind == "ratio") {
    rep = sweep_data_ratio(cfg.model, cfg.train, data, cfg.ratios, cfg.seeds, workers);
  } else {
    throw ConfigError("--kind must be alignment or ratio");
  }
  Json echo = to_json(cfg);
  echo["kind"] = kind;
  echo["data_dir"] = data_dir.empty() ? Json(nullptr) : Json(data_dir);
  write_sweep_outputs(out_dir, echo, rep);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir, const std::vector<std::uint64_t>& seeds,
               const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  if (!seeds.empty()) cfg.seeds = seeds;
  const Dataset data = load_or_generate(data_dir, cfg);
  const SweepReport rep = ablate_random(cfg.model, cfg.train, data, cfg.seeds, workers_from_env());
  Json echo = to_json(cfg);
  echo["kind"] = "ablation";
  echo["data_dir"] = data_dir.empty() ? Json(nullptr) : Json(data_dir);
  write_sweep_outputs(out_dir, echo, rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-alignment fairness laboratory"};
  app.require_subcommand(1);

  std::string config, out, data, model, split, group, mode = "none", kind;
  int level = 0, ratio = 100;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::vector<std::uint64_t> seeds;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Experiment config JSON (uses its 'data' section)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "Experiment config JSON");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--level", level, "Alignment level in percent")->check(CLI::IsMember({0, 25, 50, 75, 100}));
  tr->add_option("--mode", mode, "Alignment mode")->check(CLI::IsMember({"human", "random", "none"}));
  tr->add_option("--ratio", ratio, "Training data ratio in percent")->check(CLI::Range(1, 100));
  tr->add_option("--seed", seed, "Run seed");
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Fairness report for a checkpoint");
  ev->add_option("--model", model, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "id or ood")->required()->check(CLI::IsMember({"id", "ood"}));
  ev->add_option("--group", group, "sex or age")->required()->check(CLI::IsMember({"sex", "age"}));
  ev->add_option("--threshold", threshold, "Decision threshold on probabilities");
  ev->add_option("--out", out, "Output report.json path")->required();

  auto* sw = app.add_subcommand("sweep", "Alignment-level or data-ratio sweep");
  sw->add_option("--config", config, "Experiment config JSON");
  sw->add_option("--data", data, "Dataset directory (generated from the config when omitted)");
  sw->add_option("--kind", kind, "alignment or ratio")->required()->check(CLI::IsMember({"alignment", "ratio"}));
  sw->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  sw->add_option("--out", out, "Output directory")->required();

  auto* ab = app.add_subcommand("ablate", "Randomized-alignment ablation");
  ab->add_option("--config", config, "Experiment config JSON");
  ab->add_option("--data", data, "Dataset directory (generated from the config when omitted)");
  ab->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  ab->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(config, out);
    if (*tr) return cmd_train(config, data, level, mode, ratio, seed, out);
    if (*ev) return cmd_evaluate(model, data, split, group, out, threshold);
    if (*sw) return cmd_sweep(config, data, kind, seeds, out);
    if (*ab) return cmd_ablate(config, data, seeds, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 4;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "undefined metric: " << e.what() << "\n";
    return 5;
  } catch (const PreconditionError& e) {
    std::cerr << "undefined metric: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
