#pragma once

// Training loop with the alignment schedule, validation-AUC early stopping,
// and OOD fairness evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "egl/adamw.hpp"
#include "egl/errors.hpp"
#include "egl/losses.hpp"
#include "egl/metrics.hpp"
#include "egl/model.hpp"
#include "egl/rng.hpp"
#include "egl/synthdata.hpp"

namespace egl {

enum class AlignmentMode { none, human, random };

inline const char* to_string(AlignmentMode m) {
  switch (m) {
    case AlignmentMode::none: return "none";
    case AlignmentMode::human: return "human";
    case AlignmentMode::random: return "random";
  }
  return "?";
}

inline AlignmentMode parse_alignment_mode(const std::string& s) {
  if (s == "none") return AlignmentMode::none;
  if (s == "human") return AlignmentMode::human;
  if (s == "random") return AlignmentMode::random;
  throw ConfigError("unknown alignment mode '" + s + "'");
}

struct TrainConfig {
  AdamWHyper optimizer{};  // lr 5e-5, betas (0.9, 0.999), eps 1e-8, wd 0.01
  std::size_t batch_size = 32;
  std::size_t max_epochs = 1000;
  std::size_t patience = 30;
  int alignment_level = 0;  // percent of positive training samples
  AlignmentMode alignment_mode = AlignmentMode::none;
  int data_ratio = 100;  // percent of the training split
  std::uint64_t seed = 0;
  DiceFpConfig dice{};
  double threshold = 0.5;

  void validate() const {
    const int levels[] = {0, 25, 50, 75, 100};
    if (std::find(std::begin(levels), std::end(levels), alignment_level) == std::end(levels)) {
      throw ConfigError("alignment_level must be one of 0, 25, 50, 75, 100 (got " +
                        std::to_string(alignment_level) + ")");
    }
    if ((alignment_mode == AlignmentMode::none) != (alignment_level == 0)) {
      throw ConfigError("alignment_mode none must go with alignment_level 0 and vice versa");
    }
    if (data_ratio < 1 || data_ratio > 100) throw ConfigError("data_ratio must be in [1, 100]");
    if (batch_size == 0 || max_epochs == 0 || patience == 0) {
      throw ConfigError("batch_size, max_epochs and patience must be positive");
    }
    if (!(optimizer.learning_rate > 0.0) || !(optimizer.eps > 0.0) || !(optimizer.weight_decay >= 0.0) ||
        !(optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("invalid AdamW hyperparameters");
    }
    dice.validate();
  }
};

struct SplitResult {
  FairnessReport by_sex;
  FairnessReport by_age;
  MetricSet overall;
};

struct RunResult {
  TrainConfig config;
  double best_val_auc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_trained = 0;
  std::vector<double> val_auc_history;
  SplitResult test_id;
  SplitResult test_ood;
};

struct TrainOutput {
  ModelParams params;
  RunResult result;
};

// Indices of the training samples used at `ratio` percent: the first
// floor(ratio * n / 100) entries of a seed-fixed permutation, sorted. Subsets
// for the same seed are nested across ratios.
inline std::vector<std::size_t> ratio_subset(std::size_t n, int ratio, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x726174696fULL}));
  std::vector<std::size_t> perm = rng.permutation(n);
  const std::size_t k = (static_cast<std::size_t>(ratio) * n) / 100;
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

// Flags for `subset` marking which samples receive the alignment loss: the
// first floor(level * n_pos / 100) positives in a seed-fixed order. Nested in
// the level for a fixed seed.
inline std::vector<bool> eligibility(const SampleSet& train, std::span<const std::size_t> subset, int level,
                                     std::uint64_t seed) {
  std::vector<std::size_t> positives;  // positions within subset
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (train[subset[i]].any_positive()) positives.push_back(i);
  }
  Rng rng(derive_seed({seed, 0x616c69676eULL}));
  rng.shuffle(positives);
  const std::size_t k = (static_cast<std::size_t>(level) * positives.size()) / 100;
  std::vector<bool> flags(subset.size(), false);
  for (std::size_t i = 0; i < k; ++i) flags[positives[i]] = true;
  return flags;
}

inline std::vector<EvalRecord> evaluate_samples(const ModelConfig& mcfg, const ModelParams& params,
                                                const SampleSet& samples) {
  std::vector<EvalRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const ForwardPass pass = forward_classes(mcfg, params, s.image);
    EvalRecord r;
    r.labels = s.labels;
    r.demographics = s.demographics;
    r.attention.resize(mcfg.num_classes);
    for (std::size_t c = 0; c < mcfg.num_classes; ++c) {
      const Prediction& p = pass.classes[c].pred;
      r.probs.push_back(p.prob);
      if (c < s.labels.size() && s.labels[c] && c < s.masks.size() && s.masks[c]) {
        r.attention[c] = MapAndMask{p.aligned_map, downsample_mask(*s.masks[c], mcfg.grid_side())};
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Mean per-class AUC over classes where it is defined.
inline double macro_auc(std::span<const EvalRecord> records) {
  if (records.empty()) throw UndefinedMetricError("macro_auc: no records");
  const std::size_t classes = records.front().probs.size();
  std::vector<double> scores(records.size());
  std::vector<std::uint8_t> labels(records.size());
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      scores[i] = records[i].probs[c];
      labels[i] = records[i].labels[c];
    }
    if (auto a = try_auc(scores, labels)) {
      total += *a;
      ++defined;
    }
  }
  if (defined == 0) throw UndefinedMetricError("macro_auc: no class has both labels");
  return total / static_cast<double>(defined);
}

inline SplitResult evaluate_split(const ModelConfig& mcfg, const ModelParams& params, const SampleSet& samples,
                                  double threshold) {
  const auto records = evaluate_samples(mcfg, params, samples);
  SplitResult r;
  r.by_sex = fairness_report(records, Grouping::sex, threshold);
  r.by_age = fairness_report(records, Grouping::age_group, threshold);
  r.overall = compute_metric_set(records, threshold);
  return r;
}

namespace detail {

struct AlignmentJob {
  std::size_t class_id;
  AttentionTarget target;
};

}  // namespace detail

inline TrainOutput train(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& data) {
  mcfg.validate();
  tcfg.validate();
  if (data.train.empty() || data.val.empty()) throw TrainingError("train: empty train or validation split");

  const std::vector<std::size_t> subset = ratio_subset(data.train.size(), tcfg.data_ratio, tcfg.seed);
  bool has_positive = false;
  for (std::size_t i : subset) has_positive = has_positive || data.train[i].any_positive();
  if (!has_positive) {
    throw TrainingError("train: no positive samples in the " + std::to_string(tcfg.data_ratio) +
                        "% training subset");
  }
  const std::vector<bool> eligible = eligibility(data.train, subset, tcfg.alignment_level, tcfg.seed);

  // Grid-resolution human masks for eligible positives.
  const std::size_t gs = mcfg.grid_side();
  std::vector<std::vector<std::optional<AttentionTarget>>> human(subset.size());
  if (tcfg.alignment_mode == AlignmentMode::human) {
    for (std::size_t i = 0; i < subset.size(); ++i) {
      if (!eligible[i]) continue;
      const Sample& s = data.train[subset[i]];
      human[i].resize(mcfg.num_classes);
      for (std::size_t c = 0; c < mcfg.num_classes; ++c) {
        if (!s.labels[c]) continue;
        if (!s.masks[c]) {
          throw TrainingError("train: alignment-eligible positive sample " + std::to_string(subset[i]) +
                              " lacks an expert mask for class " + std::to_string(c));
        }
        human[i][c] = downsample_mask(*s.masks[c], gs);
      }
    }
  }

  ModelParams params = init_params(mcfg, tcfg.seed);
  ModelParams best = params;
  AdamWState opt(params.count());
  RunResult result;
  result.config = tcfg;
  double best_auc = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed({tcfg.seed, epoch, 0x7368756666ULL}));
    const std::vector<std::size_t> order = shuffle_rng.permutation(subset.size());

    for (std::size_t start = 0, batch = 0; start < order.size(); start += tcfg.batch_size, ++batch) {
      const std::size_t stop = std::min(order.size(), start + tcfg.batch_size);

      // Alignment targets for this batch (positives of eligible samples only).
      std::vector<std::vector<detail::AlignmentJob>> jobs(stop - start);
      std::size_t n_align = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t pos = order[b];
        if (!eligible[pos]) continue;
        const Sample& s = data.train[subset[pos]];
        for (std::size_t c = 0; c < mcfg.num_classes; ++c) {
          if (!s.labels[c]) continue;
          if (tcfg.alignment_mode == AlignmentMode::human) {
            jobs[b - start].push_back({c, *human[pos][c]});
          } else {
            const std::uint64_t shape_seed = derive_seed({tcfg.seed, subset[pos], c});
            jobs[b - start].push_back({c, random_attention(shape_seed, epoch, gs, gs)});
          }
          ++n_align;
        }
      }

      ModelParams grads = ModelParams::zeros(mcfg);
      const double batch_n = static_cast<double>(stop - start);
      double batch_loss = 0.0;
      std::vector<double> labels(mcfg.num_classes), logits(mcfg.num_classes);
      std::vector<ClassUpstream> upstream(mcfg.num_classes);
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = data.train[subset[order[b]]];
        const ForwardPass pass = forward_classes(mcfg, params, s.image);
        for (std::size_t c = 0; c < mcfg.num_classes; ++c) {
          labels[c] = s.labels[c];
          logits[c] = pass.classes[c].pred.logit;
          upstream[c] = ClassUpstream{};
        }
        const CrossEntropyResult ce = cross_entropy(labels, logits);
        double al = 0.0;
        for (std::size_t c = 0; c < mcfg.num_classes; ++c) upstream[c].d_logit = ce.grad[c] / batch_n;
        for (const auto& job : jobs[b - start]) {
          const LossAndGrad d = dice_fp_loss(job.target, pass.classes[job.class_id].pred.aligned_map, tcfg.dice);
          al += d.loss;
          Grid g = d.grad;
          for (double& v : g.values()) v /= static_cast<double>(n_align);
          upstream[job.class_id].d_aligned = std::move(g);
        }
        batch_loss += ce.loss / batch_n + (n_align ? al / static_cast<double>(n_align) : 0.0);
        backward(mcfg, params, pass, upstream, grads);
      }
      if (!std::isfinite(batch_loss)) throw DivergenceError("train: non-finite loss", epoch, batch);

      std::vector<double> flat = params.flatten();
      const std::vector<double> g = grads.flatten();
      for (double v : g) {
        if (!std::isfinite(v)) throw DivergenceError("train: non-finite gradient", epoch, batch);
      }
      adamw_step(flat, g, opt, tcfg.optimizer);
      params.assign(flat);
    }

    const double val_auc = macro_auc(evaluate_samples(mcfg, params, data.val));
    result.val_auc_history.push_back(val_auc);
    result.epochs_trained = epoch + 1;
    if (val_auc > best_auc) {
      best_auc = val_auc;
      best = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tcfg.patience) {
      break;
    }
  }

  result.best_val_auc = best_auc;
  result.test_id = evaluate_split(mcfg, best, data.test_id, tcfg.threshold);
  result.test_ood = evaluate_split(mcfg, best, data.test_ood, tcfg.threshold);
  return TrainOutput{std::move(best), std::move(result)};
}

}  // namespace egl
