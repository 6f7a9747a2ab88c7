#pragma once

// report.json / report.csv / runs.csv writers and the report.csv reader.
//
// report.csv columns: kind,arm,level,ratio,mode,metric,mean,std,n
// runs.csv columns:   kind,arm,level,ratio,mode,seed,split,grouping,subgroup,metric,value
// Reals are written with 17 significant digits so a reader recovers them exactly.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "egl/bytes.hpp"
#include "egl/config_io.hpp"
#include "egl/errors.hpp"
#include "egl/experiment.hpp"
#include "egl/metrics.hpp"

namespace egl {

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const MetricSet& m) {
  Json j = Json::object();
  for (const auto& name : metric_names()) j[name] = opt_json(metric_value(m, name));
  j["n"] = m.n;
  return j;
}

inline Json to_json(const FairnessReport& r) {
  Json groups = Json::object();
  for (const auto& [g, m] : r.per_subgroup) groups[g] = to_json(m);
  Json gaps = Json::object();
  for (const auto& [m, v] : r.gaps) gaps[m] = opt_json(v);
  return Json{{"grouping", to_string(r.grouping)}, {"per_subgroup", groups}, {"gaps", gaps}, {"flags", r.flags}};
}

inline Json to_json(const SplitResult& s) {
  return Json{{"overall", to_json(s.overall)}, {"by_sex", to_json(s.by_sex)}, {"by_age", to_json(s.by_age)}};
}

inline Json to_json(const RunResult& r) {
  return Json{{"config", to_json(r.config)},
              {"best_val_auc", r.best_val_auc},
              {"best_epoch", r.best_epoch},
              {"epochs_trained", r.epochs_trained},
              {"val_auc_history", r.val_auc_history},
              {"test_id", to_json(r.test_id)},
              {"test_ood", to_json(r.test_ood)}};
}

inline Json to_json(const RunSpec& s) {
  return Json{{"arm", s.arm}, {"level", s.level}, {"ratio", s.ratio}, {"mode", to_string(s.mode)}, {"seed", s.seed}};
}

inline Json to_json(const AggregateRow& r) {
  return Json{{"arm", r.arm},   {"level", r.level}, {"ratio", r.ratio}, {"mode", r.mode},
              {"metric", r.metric}, {"mean", r.mean}, {"std", r.std},     {"n", r.n},
              {"display", format_mean_std(Aggregate{r.mean, r.std, r.n})}};
}

inline Json to_json(const SweepReport& rep) {
  Json runs = Json::array();
  for (const auto& r : rep.runs) runs.push_back({{"spec", to_json(r.spec)}, {"result", to_json(r.result)}});
  Json rows = Json::array();
  for (const auto& r : rep.rows) rows.push_back(to_json(r));
  return Json{{"kind", rep.kind}, {"units", "percent (epochs_trained: count)"}, {"runs", runs}, {"aggregates", rows}};
}

inline Json to_json(const ExperimentConfig& c) {
  return Json{{"data", to_json(c.data)},   {"model", to_json(c.model)},   {"train", to_json(c.train)},
              {"seeds", c.seeds},          {"levels", c.levels},          {"ratios", c.ratios}};
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  detail::reject_unknown(j, {"data", "model", "train", "seeds", "levels", "ratios"}, "config");
  ExperimentConfig c;
  if (j.contains("data")) c.data = generator_config_from_json(j.at("data"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  detail::read_opt(j, "seeds", c.seeds, "config");
  detail::read_opt(j, "levels", c.levels, "config");
  detail::read_opt(j, "ratios", c.ratios, "config");
  c.validate();
  return c;
}

inline ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

inline std::string report_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "kind,arm,level,ratio,mode,metric,mean,std,n\n";
  for (const auto& r : rows) {
    out += r.kind + "," + r.arm + "," + std::to_string(r.level) + "," + std::to_string(r.ratio) + "," + r.mode + "," +
           r.metric + "," + format_real(r.mean) + "," + format_real(r.std) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

inline std::vector<AggregateRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "kind,arm,level,ratio,mode,metric,mean,std,n") {
    throw FormatError("report.csv: unexpected header", 0);
  }
  std::vector<AggregateRow> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError("report.csv: expected 9 columns", offset);
    auto number = [&]<typename T>(const std::string& cell, T& out) {
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
      if (ec != std::errc{} || end != cell.data() + cell.size()) {
        throw FormatError("report.csv: malformed number '" + cell + "'", offset);
      }
    };
    AggregateRow row{cells[0], cells[1], 0, 0, cells[4], cells[5], 0.0, 0.0, 0};
    number(cells[2], row.level);
    number(cells[3], row.ratio);
    number(cells[6], row.mean);
    number(cells[7], row.std);
    number(cells[8], row.n);
    rows.push_back(std::move(row));
    offset += line.size() + 1;
  }
  return rows;
}

inline std::vector<AggregateRow> read_report_csv(const std::filesystem::path& path) {
  const bytes::Buffer b = bytes::read_file(path);
  return parse_report_csv(std::string(b.begin(), b.end()));
}

// Flat per-run table: one row per run x split x grouping x subgroup x metric.
inline std::string runs_csv(const SweepReport& rep) {
  std::string out = "kind,arm,level,ratio,mode,seed,split,grouping,subgroup,metric,value\n";
  for (const auto& run : rep.runs) {
    const std::string prefix = rep.kind + "," + run.spec.arm + "," + std::to_string(run.spec.level) + "," +
                               std::to_string(run.spec.ratio) + "," + to_string(run.spec.mode) + "," +
                               std::to_string(run.spec.seed) + ",";
    auto emit = [&](const char* split, const FairnessReport& fr) {
      for (const auto& [group, ms] : fr.per_subgroup) {
        for (const auto& m : metric_names()) {
          if (auto v = metric_value(ms, m)) {
            out += prefix + split + "," + to_string(fr.grouping) + "," + group + "," + m + "," + format_real(*v) + "\n";
          }
        }
      }
      for (const auto& [m, v] : fr.gaps) {
        if (v) out += prefix + split + "," + to_string(fr.grouping) + ",gap," + m + "," + format_real(*v) + "\n";
      }
    };
    emit("id", run.result.test_id.by_sex);
    emit("id", run.result.test_id.by_age);
    emit("ood", run.result.test_ood.by_sex);
    emit("ood", run.result.test_ood.by_age);
  }
  return out;
}

// Writes config_echo.json, report.json, report.csv and runs.csv into `dir`.
inline void write_sweep_outputs(const std::filesystem::path& dir, const Json& config_echo, const SweepReport& rep) {
  std::filesystem::create_directories(dir);
  bytes::write_text(dir / "config_echo.json", config_echo.dump(2) + "\n");
  bytes::write_text(dir / "report.json", to_json(rep).dump(2) + "\n");
  bytes::write_text(dir / "report.csv", report_csv(rep.rows));
  bytes::write_text(dir / "runs.csv", runs_csv(rep));
}

}  // namespace egl
