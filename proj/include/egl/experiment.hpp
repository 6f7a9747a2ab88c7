#pragma once

// Multi-run experiments: alignment-level sweep, data-ratio sweep and the
// randomized-alignment ablation, with seed aggregation.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "egl/errors.hpp"
#include "egl/metrics.hpp"
#include "egl/model.hpp"
#include "egl/synthdata.hpp"
#include "egl/train.hpp"

namespace egl {

// Training defaults sized for the synthetic world on one CPU core. The
// TrainConfig struct defaults keep the large-scale values (lr 5e-5, up to
// 1000 epochs, patience 30); at this scale those do not converge in a
// practical number of epochs.
inline TrainConfig desk_train_defaults() {
  TrainConfig t;
  t.optimizer.learning_rate = 6e-3;
  t.max_epochs = 60;
  t.patience = 30;
  return t;
}

struct ExperimentConfig {
  GeneratorConfig data{};
  ModelConfig model{};
  TrainConfig train = desk_train_defaults();
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<int> levels = {0, 25, 50, 75, 100};
  std::vector<int> ratios = {25, 50, 75, 100};

  void validate() const {
    data.validate();
    model.validate();
    if (model.image_size != data.image_size || model.num_classes != data.classes) {
      throw ConfigError("model image_size/num_classes must match the data config");
    }
  }
};

// Worker count from EGL_WORKERS. Unset means serial; garbage is a ConfigError.
inline std::size_t workers_from_env() {
  const char* v = std::getenv("EGL_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("EGL_WORKERS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

struct RunSpec {
  std::string arm;
  int level = 0;
  int ratio = 100;
  AlignmentMode mode = AlignmentMode::none;
  std::uint64_t seed = 0;
};

struct RunRecord {
  RunSpec spec;
  RunResult result;
};

struct AggregateRow {
  std::string kind;
  std::string arm;
  int level = 0;
  int ratio = 100;
  std::string mode;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;

  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

struct SweepReport {
  std::string kind;
  std::vector<RunRecord> runs;
  std::vector<AggregateRow> rows;
};

// Runs jobs on `workers` threads. Results land at the job's index, so output
// order does not depend on scheduling. The first failing job (by index) is
// rethrown after all workers finish.
template <typename Job, typename Result>
std::vector<Result> run_parallel(const std::vector<Job>& jobs, std::size_t workers,
                                 const std::function<Result(const Job&)>& fn) {
  std::vector<Result> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = fn(jobs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

inline std::vector<RunRecord> run_specs(const ModelConfig& mcfg, const TrainConfig& base, const Dataset& data,
                                        const std::vector<RunSpec>& specs, std::size_t workers) {
  std::function<RunRecord(const RunSpec&)> fn = [&](const RunSpec& s) {
    TrainConfig t = base;
    t.alignment_level = s.level;
    t.alignment_mode = s.mode;
    t.data_ratio = s.ratio;
    t.seed = s.seed;
    return RunRecord{s, train(mcfg, t, data).result};
  };
  return run_parallel(specs, workers, fn);
}

// Headline numbers of one run, in percent (epochs_trained excepted).
inline FieldMap run_metrics(const RunResult& r) {
  FieldMap out;
  out["best_val_auc"] = 100.0 * r.best_val_auc;
  out["epochs_trained"] = static_cast<double>(r.epochs_trained);
  auto add_split = [&](const std::string& prefix, const SplitResult& s) {
    for (const auto& m : metric_names()) {
      if (auto v = metric_value(s.overall, m)) out[prefix + m] = 100.0 * *v;
    }
    for (const auto& [m, v] : s.by_sex.gaps) {
      if (v) out[prefix + "gap_sex_" + m] = 100.0 * *v;
    }
    for (const auto& [m, v] : s.by_age.gaps) {
      if (v) out[prefix + "gap_age_" + m] = 100.0 * *v;
    }
  };
  add_split("id_", r.test_id);
  add_split("ood_", r.test_ood);
  return out;
}

// Mean and sample std over seeds per (arm, level, ratio, mode) and metric,
// sorted canonically. Metrics undefined in any run of a group are dropped.
inline std::vector<AggregateRow> aggregate_records(const std::string& kind, const std::vector<RunRecord>& runs) {
  using Key = std::tuple<std::string, int, int, std::string>;
  std::map<Key, std::vector<FieldMap>> groups;
  for (const auto& r : runs) {
    groups[{r.spec.arm, r.spec.level, r.spec.ratio, to_string(r.spec.mode)}].push_back(run_metrics(r.result));
  }
  std::vector<AggregateRow> rows;
  for (const auto& [key, maps] : groups) {
    if (maps.size() < 2) {
      throw PreconditionError("aggregate: arm '" + std::get<0>(key) + "' has a single run; need at least two seeds");
    }
    std::vector<FieldMap> common(maps.size());
    for (const auto& [metric, unused] : maps.front()) {
      const bool everywhere =
          std::all_of(maps.begin(), maps.end(), [&](const FieldMap& m) { return m.count(metric) > 0; });
      if (!everywhere) continue;
      for (std::size_t i = 0; i < maps.size(); ++i) common[i][metric] = maps[i].at(metric);
    }
    for (const auto& [metric, agg] : aggregate_runs(std::span<const FieldMap>(common))) {
      rows.push_back(AggregateRow{kind, std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), metric,
                                  agg.mean, agg.std, agg.n});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
    return std::tie(a.arm, a.level, a.ratio, a.mode, a.metric) < std::tie(b.arm, b.level, b.ratio, b.mode, b.metric);
  });
  return rows;
}

inline void require_seeds(const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw ConfigError("at least two seeds are required for mean/std aggregation");
}

inline SweepReport sweep_alignment(const ModelConfig& mcfg, const TrainConfig& base, const Dataset& data,
                                   const std::vector<int>& levels, const std::vector<std::uint64_t>& seeds,
                                   std::size_t workers = 1) {
  require_seeds(seeds);
  std::vector<RunSpec> specs;
  for (int level : levels) {
    for (auto seed : seeds) {
      const AlignmentMode mode = level == 0 ? AlignmentMode::none : AlignmentMode::human;
      specs.push_back(RunSpec{to_string(mode), level, base.data_ratio, mode, seed});
    }
  }
  SweepReport rep{"alignment", run_specs(mcfg, base, data, specs, workers), {}};
  rep.rows = aggregate_records(rep.kind, rep.runs);
  return rep;
}

inline SweepReport sweep_data_ratio(const ModelConfig& mcfg, const TrainConfig& base, const Dataset& data,
                                    const std::vector<int>& ratios, const std::vector<std::uint64_t>& seeds,
                                    std::size_t workers = 1) {
  require_seeds(seeds);
  std::vector<RunSpec> specs;
  for (int ratio : ratios) {
    for (auto seed : seeds) {
      specs.push_back(RunSpec{"aligned", 100, ratio, AlignmentMode::human, seed});
      specs.push_back(RunSpec{"baseline", 0, ratio, AlignmentMode::none, seed});
    }
  }
  SweepReport rep{"ratio", run_specs(mcfg, base, data, specs, workers), {}};
  rep.rows = aggregate_records(rep.kind, rep.runs);
  return rep;
}

inline SweepReport ablate_random(const ModelConfig& mcfg, const TrainConfig& base, const Dataset& data,
                                 const std::vector<std::uint64_t>& seeds, std::size_t workers = 1) {
  require_seeds(seeds);
  std::vector<RunSpec> specs;
  for (auto seed : seeds) {
    specs.push_back(RunSpec{"none", 0, base.data_ratio, AlignmentMode::none, seed});
    specs.push_back(RunSpec{"human", 100, base.data_ratio, AlignmentMode::human, seed});
    specs.push_back(RunSpec{"random", 100, base.data_ratio, AlignmentMode::random, seed});
  }
  SweepReport rep{"ablation", run_specs(mcfg, base, data, specs, workers), {}};
  rep.rows = aggregate_records(rep.kind, rep.runs);
  return rep;
}

inline const AggregateRow* find_row(const SweepReport& rep, const std::string& arm, int level, int ratio,
                                    const std::string& metric) {
  for (const auto& r : rep.rows) {
    if (r.arm == arm && r.level == level && r.ratio == ratio && r.metric == metric) return &r;
  }
  return nullptr;
}

}  // namespace egl
