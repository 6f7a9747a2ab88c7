#pragma once

// Shared helpers for the unit tests and the acceptance runner.

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <optional>
#include <span>
#include <vector>

#include "egl/diffcore.hpp"
#include "egl/losses.hpp"
#include "egl/metrics.hpp"
#include "egl/model.hpp"
#include "egl/rng.hpp"
#include "egl/synthdata.hpp"

namespace egl::testing {

// One training example for the full-model objective: image, binary labels
// and an attention-grid mask for each positive class.
struct Example {
  Grid image;
  std::vector<double> labels;
  std::vector<std::optional<AttentionTarget>> masks;
};

inline Example random_example(const ModelConfig& cfg, Rng& rng) {
  Example ex;
  ex.image = Grid(cfg.image_size, cfg.image_size);
  for (double& v : ex.image.values()) v = rng.uniform();
  const std::size_t gs = cfg.grid_side();
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const bool pos = rng.bernoulli(0.6);
    ex.labels.push_back(pos ? 1.0 : 0.0);
    if (!pos) {
      ex.masks.emplace_back();
      continue;
    }
    Grid m(gs, gs);
    for (double& v : m.values()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    m[rng.index(m.size())] = 1.0;
    ex.masks.push_back(AttentionTarget{std::move(m)});
  }
  return ex;
}

// Parameters with every field randomized, aligner included, so that no
// gradient path is trivially zero.
inline ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_params(cfg, seed);
  Rng rng(derive_seed({seed, 99}));
  for (double& v : p.patch_bias.values()) v = rng.uniform(-0.2, 0.2);
  for (double& v : p.k_proj.values()) v = rng.uniform(-0.5, 0.5);
  p.aligner[0] = rng.uniform(0.5, 1.5);
  p.aligner[1] = rng.uniform(-0.5, 0.5);
  p.cls_b[0] = rng.uniform(-0.2, 0.2);
  return p;
}

// CE summed over classes plus dice-FP for every positive class with a mask.
inline double total_objective(const ModelConfig& cfg, const ModelParams& p, const Example& ex,
                              const DiceFpConfig& dice = {}) {
  const ForwardPass pass = forward_classes(cfg, p, ex.image);
  std::vector<double> logits;
  for (const auto& t : pass.classes) logits.push_back(t.pred.logit);
  double loss = cross_entropy(ex.labels, logits).loss;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    if (ex.masks[c]) loss += dice_fp_loss(*ex.masks[c], pass.classes[c].pred.aligned_map, dice).loss;
  }
  return loss;
}

inline std::vector<double> total_gradient(const ModelConfig& cfg, const ModelParams& p, const Example& ex,
                                          const DiceFpConfig& dice = {}) {
  const ForwardPass pass = forward_classes(cfg, p, ex.image);
  std::vector<double> logits;
  for (const auto& t : pass.classes) logits.push_back(t.pred.logit);
  const CrossEntropyResult ce = cross_entropy(ex.labels, logits);
  std::vector<ClassUpstream> up(cfg.num_classes);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    up[c].d_logit = ce.grad[c];
    if (ex.masks[c]) up[c].d_aligned = dice_fp_loss(*ex.masks[c], pass.classes[c].pred.aligned_map, dice).grad;
  }
  ModelParams g = ModelParams::zeros(cfg);
  backward(cfg, p, pass, up, g);
  return g.flatten();
}

// Max relative error of the analytic full-model gradient against central
// differences for one random (config, seed) case.
inline double full_model_grad_error(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-5) {
  Rng rng(derive_seed({seed, 7}));
  const Example ex = random_example(cfg, rng);
  const ModelParams p = random_params(cfg, seed);
  const std::vector<double> analytic = total_gradient(cfg, p, ex);
  const std::vector<double> theta = p.flatten();
  ModelParams probe = p;
  const ScalarFn f = [&](std::span<const double> x) {
    probe.assign(x);
    return total_objective(cfg, probe, ex);
  };
  return grad_check(f, analytic, theta, h);
}

// O(n_pos * n_neg) pairwise Mann-Whitney count.
inline double brute_force_auc(std::span<const double> s, std::span<const std::uint8_t> y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Small generator config for fast data-path tests.
inline GeneratorConfig tiny_data(std::uint64_t seed = 0) {
  GeneratorConfig g;
  g.n_train = 120;
  g.n_val = 60;
  g.n_test_id = 80;
  g.n_test_ood = 80;
  g.image_size = 16;
  g.seed = seed;
  return g;
}

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.image_size = 16;
  m.patch_size = 4;
  m.embed_dim = 8;
  return m;
}

// Random evaluation records with per-class scores, labels, demographics and
// attention maps for positive classes.
inline std::vector<EvalRecord> random_records(Rng& rng, std::size_t n, std::size_t classes = 2,
                                              std::size_t grid = 3) {
  std::vector<EvalRecord> out(n);
  for (auto& r : out) {
    r.demographics.sex = rng.bernoulli(0.5) ? Sex::male : Sex::female;
    r.demographics.age_group = rng.bernoulli(0.5) ? AgeGroup::old : AgeGroup::young;
    r.attention.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      const bool pos = rng.bernoulli(0.4);
      r.labels.push_back(pos ? 1 : 0);
      // Coarse scores so that ties occur.
      r.probs.push_back(static_cast<double>(rng.index(11)) / 10.0);
      if (pos) {
        Grid map(grid, grid), mask(grid, grid);
        for (double& v : map.values()) v = rng.uniform();
        mask[rng.index(mask.size())] = 1.0;
        r.attention[c] = MapAndMask{map, AttentionTarget{mask}};
      }
    }
  }
  // Each (sex, age) cell gets one positive and one negative per class so AUC is defined everywhere.
  for (std::size_t cell = 0; cell < 4; ++cell) {
    for (int lab = 0; lab < 2; ++lab) {
      EvalRecord r;
      r.demographics.sex = cell / 2 ? Sex::male : Sex::female;
      r.demographics.age_group = cell % 2 ? AgeGroup::old : AgeGroup::young;
      r.attention.resize(classes);
      for (std::size_t c = 0; c < classes; ++c) {
        r.labels.push_back(static_cast<std::uint8_t>(lab));
        r.probs.push_back(rng.uniform());
        if (lab) {
          Grid map(grid, grid), mask(grid, grid);
          for (double& v : map.values()) v = rng.uniform();
          mask[0] = 1.0;
          r.attention[c] = MapAndMask{map, AttentionTarget{mask}};
        }
      }
      out.push_back(r);
    }
  }
  return out;
}

inline bool same_sample(const Sample& a, const Sample& b) {
  return a.image == b.image && a.labels == b.labels && a.markers == b.markers && a.masks == b.masks &&
         a.demographics.sex == b.demographics.sex && a.demographics.age_group == b.demographics.age_group &&
         a.align_eligible == b.align_eligible;
}

inline bool same_dataset(const Dataset& a, const Dataset& b) {
  auto eq = [](const SampleSet& x, const SampleSet& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!same_sample(x[i], y[i])) return false;
    }
    return true;
  };
  return eq(a.train, b.train) && eq(a.val, b.val) && eq(a.test_id, b.test_id) && eq(a.test_ood, b.test_ood);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("egl-test-" + name + "-" + std::to_string(static_cast<long>(::getpid())));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace egl::testing
