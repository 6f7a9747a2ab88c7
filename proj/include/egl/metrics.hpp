#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "egl/diffcore.hpp"
#include "egl/errors.hpp"
#include "egl/losses.hpp"
#include "egl/synthdata.hpp"

namespace egl {

// Mann-Whitney AUC via one sort: positives score 1 per negative strictly
// below and 0.5 per tied negative. Numerators are exact half-integers, so the
// result matches the pairwise count bit for bit.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double wins = 0.0;
  std::size_t neg_below = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    wins += static_cast<double>(pos) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg));
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("auc: needs at least one positive and one negative label");
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline std::optional<double> try_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  try {
    return auc(scores, labels);
  } catch (const UndefinedMetricError&) {
    return std::nullopt;
  }
}

struct ThresholdMetrics {
  double accuracy = 0.0;
  std::optional<double> sensitivity;  // absent without positive labels
  std::optional<double> f1;           // absent when TP + FP + FN == 0
};

inline ThresholdMetrics threshold_metrics(std::span<const double> scores,
                                          std::span<const std::uint8_t> labels, double threshold = 0.5) {
  if (scores.empty()) throw DomainError("threshold_metrics: empty input");
  if (scores.size() != labels.size()) throw DimensionError("threshold_metrics: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) {
      (pred ? tp : fn) += 1;
    } else {
      (pred ? fp : tn) += 1;
    }
  }
  ThresholdMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp + fp + fn > 0) m.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return m;
}

// Row-major argmax, lowest index on ties.
inline std::size_t argmax_index(const Grid& g) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (g[i] > g[best]) best = i;
  }
  return best;
}

struct MapAndMask {
  Grid map;
  AttentionTarget target;
};

inline bool is_hit(const Grid& map, const AttentionTarget& target) {
  require_same_shape(map, target.mask, "hit_rate");
  if (target.support() == 0) throw PreconditionError("hit_rate: empty mask");
  return target.mask[argmax_index(map)] != 0.0;
}

// Pointing game: fraction of maps whose peak lies inside the mask.
inline double hit_rate(std::span<const MapAndMask> items) {
  if (items.empty()) throw DomainError("hit_rate: no samples");
  std::size_t hits = 0;
  for (const auto& it : items) hits += is_hit(it.map, it.target);
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

struct MetricSet {
  std::optional<double> accuracy;
  std::optional<double> auc;
  std::optional<double> sensitivity;
  std::optional<double> f1;
  std::optional<double> hit_rate;
  std::size_t n = 0;

  friend bool operator==(const MetricSet&, const MetricSet&) = default;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"accuracy", "auc", "sensitivity", "f1", "hit_rate"};
  return names;
}

inline std::optional<double> metric_value(const MetricSet& m, const std::string& name) {
  if (name == "accuracy") return m.accuracy;
  if (name == "auc") return m.auc;
  if (name == "sensitivity") return m.sensitivity;
  if (name == "f1") return m.f1;
  if (name == "hit_rate") return m.hit_rate;
  throw SchemaError("unknown metric '" + name + "'");
}

// One evaluated sample: per-class probabilities and labels, demographics and,
// for positive classes with an expert mask, the aligned map next to the mask
// (both at attention-grid resolution).
struct EvalRecord {
  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
  Demographics demographics;
  std::vector<std::optional<MapAndMask>> attention;
};

// Per-class metrics macro-averaged over the classes where each is defined;
// hit rate pools every (sample, positive class) pair with a mask.
inline MetricSet compute_metric_set(std::span<const EvalRecord> records, double threshold = 0.5) {
  MetricSet m;
  m.n = records.size();
  if (records.empty()) return m;
  const std::size_t classes = records.front().probs.size();
  auto mean_of = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::vector<double> accs, aucs, sens, f1s;
  std::vector<double> scores(records.size());
  std::vector<std::uint8_t> labels(records.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].probs.size() != classes || records[i].labels.size() != classes) {
        throw DimensionError("metric set: inconsistent class count");
      }
      scores[i] = records[i].probs[c];
      labels[i] = records[i].labels[c];
    }
    const ThresholdMetrics t = threshold_metrics(scores, labels, threshold);
    accs.push_back(t.accuracy);
    if (t.sensitivity) sens.push_back(*t.sensitivity);
    if (t.f1) f1s.push_back(*t.f1);
    if (auto a = try_auc(scores, labels)) aucs.push_back(*a);
  }
  m.accuracy = mean_of(accs);
  m.auc = mean_of(aucs);
  m.sensitivity = mean_of(sens);
  m.f1 = mean_of(f1s);

  std::vector<MapAndMask> items;
  for (const auto& r : records) {
    for (const auto& a : r.attention) {
      if (a) items.push_back(*a);
    }
  }
  if (!items.empty()) m.hit_rate = hit_rate(items);
  return m;
}

enum class Grouping { sex, age_group };

inline const char* to_string(Grouping g) { return g == Grouping::sex ? "sex" : "age"; }

inline std::string subgroup_label(const Demographics& d, Grouping g) {
  return g == Grouping::sex ? to_string(d.sex) : to_string(d.age_group);
}

struct FairnessReport {
  Grouping grouping = Grouping::sex;
  std::map<std::string, MetricSet> per_subgroup;
  std::map<std::string, std::optional<double>> gaps;  // best minus worst, per metric
  std::vector<std::string> flags;                    // excluded subgroups / undefined gaps

  friend bool operator==(const FairnessReport&, const FairnessReport&) = default;
};

struct GapResult {
  std::map<std::string, std::optional<double>> gaps;
  std::vector<std::string> flags;
};

inline GapResult fairness_gaps(const std::map<std::string, MetricSet>& per_subgroup) {
  GapResult r;
  for (const auto& metric : metric_names()) {
    std::optional<double> lo, hi;
    std::size_t valid = 0;
    for (const auto& [group, ms] : per_subgroup) {
      const auto v = metric_value(ms, metric);
      if (!v) {
        r.flags.push_back(metric + ": subgroup '" + group + "' excluded (undefined)");
        continue;
      }
      ++valid;
      lo = lo ? std::min(*lo, *v) : *v;
      hi = hi ? std::max(*hi, *v) : *v;
    }
    if (valid >= 2) {
      r.gaps[metric] = *hi - *lo;
    } else {
      r.gaps[metric] = std::nullopt;
      r.flags.push_back(metric + ": gap undefined (" + std::to_string(valid) + " valid subgroups)");
    }
  }
  return r;
}

// Throws UndefinedMetricError when fewer than two subgroups support an AUC.
inline FairnessReport fairness_report(std::span<const EvalRecord> records, Grouping grouping,
                                      double threshold = 0.5) {
  std::map<std::string, std::vector<EvalRecord>> groups;
  for (const auto& r : records) groups[subgroup_label(r.demographics, grouping)].push_back(r);
  FairnessReport rep;
  rep.grouping = grouping;
  for (const auto& [label, rs] : groups) rep.per_subgroup[label] = compute_metric_set(rs, threshold);
  GapResult g = fairness_gaps(rep.per_subgroup);
  rep.gaps = std::move(g.gaps);
  rep.flags = std::move(g.flags);
  if (!rep.gaps.at("auc")) {
    throw UndefinedMetricError(std::string("fairness_report: fewer than two subgroups with a defined AUC for ") +
                               to_string(grouping) + " grouping");
  }
  return rep;
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // unbiased (n - 1)
  std::size_t n = 0;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

using FieldMap = std::map<std::string, double>;

inline FieldMap flatten(const MetricSet& m, const std::string& prefix = "") {
  FieldMap out;
  for (const auto& name : metric_names()) {
    if (auto v = metric_value(m, name)) out[prefix + name] = *v;
  }
  return out;
}

inline FieldMap flatten(const FairnessReport& r) {
  FieldMap out;
  for (const auto& [g, m] : r.per_subgroup) {
    for (const auto& [k, v] : flatten(m, g + ".")) out[k] = v;
  }
  for (const auto& [metric, v] : r.gaps) {
    if (v) out["gap." + metric] = *v;
  }
  return out;
}

inline std::map<std::string, Aggregate> aggregate_runs(std::span<const FieldMap> runs) {
  if (runs.size() < 2) {
    throw PreconditionError("aggregate_runs: need at least two runs, got " + std::to_string(runs.size()));
  }
  for (std::size_t i = 1; i < runs.size(); ++i) {
    bool same = runs[i].size() == runs[0].size();
    for (auto a = runs[0].begin(), b = runs[i].begin(); same && a != runs[0].end(); ++a, ++b) {
      same = a->first == b->first;
    }
    if (!same) throw SchemaError("aggregate_runs: run " + std::to_string(i) + " has different fields");
  }
  std::map<std::string, Aggregate> out;
  const double n = static_cast<double>(runs.size());
  for (const auto& [key, unused] : runs[0]) {
    // Shifted by the first run so identical runs give a std of exactly 0.
    const double shift = runs[0].at(key);
    double offset = 0.0;
    for (const auto& r : runs) offset += r.at(key) - shift;
    offset /= n;
    double ss = 0.0;
    for (const auto& r : runs) {
      const double d = (r.at(key) - shift) - offset;
      ss += d * d;
    }
    out[key] = Aggregate{shift + offset, std::sqrt(ss / (n - 1.0)), runs.size()};
  }
  return out;
}

template <typename T>
std::map<std::string, Aggregate> aggregate_runs(std::span<const T> reports) {
  std::vector<FieldMap> flat;
  flat.reserve(reports.size());
  for (const auto& r : reports) flat.push_back(flatten(r));
  return aggregate_runs(std::span<const FieldMap>(flat));
}

// "3.20 ± 0.19"
inline std::string format_mean_std(const Aggregate& a, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f \xC2\xB1 %.*f", decimals, a.mean, decimals, a.std);
  return buf;
}

}  // namespace egl
