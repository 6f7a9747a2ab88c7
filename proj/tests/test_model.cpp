#include <vector>

#include <gtest/gtest.h>

#include "egl/model.hpp"
#include "support.hpp"

using namespace egl;
using egl::testing::full_model_grad_error;

namespace {

Grid random_image(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Grid g(cfg.image_size, cfg.image_size);
  for (double& v : g.values()) v = rng.uniform();
  return g;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  const ModelConfig cfg;
  EXPECT_EQ(init_params(cfg, 7), init_params(cfg, 7));
  EXPECT_NE(init_params(cfg, 7), init_params(cfg, 8));
}

TEST(InitParams, Shapes) {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.patch_size = 4;
  const ModelParams p = init_params(cfg, 0);
  EXPECT_EQ(p.patch_proj.rows(), 16u);
  EXPECT_EQ(p.patch_proj.cols(), 16u);
  EXPECT_EQ(p.class_embed.rows(), cfg.num_classes);
  EXPECT_TRUE(p.matches(cfg));
}

TEST(InitParams, UniformRangeScaledByFanIn) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 3);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim()));
  double mean = 0.0;
  for (double v : p.patch_proj.values()) {
    EXPECT_LE(std::abs(v), bound);
    mean += v;
  }
  EXPECT_NEAR(mean / static_cast<double>(p.patch_proj.size()), 0.0, 0.1 * bound);
}

TEST(InitParams, PatchSizeMustDivideImage) {
  ModelConfig cfg;
  cfg.patch_size = 5;
  EXPECT_THROW(init_params(cfg, 0), ConfigError);
}

TEST(Forward, AttentionSumsToOneAndMapInUnitInterval) {
  const ModelConfig cfg = egl::testing::tiny_model();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelParams p = egl::testing::random_params(cfg, seed);
    const ForwardPass pass = forward_classes(cfg, p, random_image(cfg, seed + 100));
    for (const auto& t : pass.classes) {
      EXPECT_NEAR(t.pred.raw_attention.sum(), 1.0, 1e-9);
      EXPECT_EQ(t.pred.raw_attention.rows(), cfg.grid_side());
      for (double v : t.pred.aligned_map.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_NEAR(t.pred.prob, sigmoid(t.pred.logit), 1e-15);
    }
  }
}

TEST(Forward, UniformImageWithZeroQueryGivesUniformAttention) {
  const ModelConfig cfg;
  ModelParams p = init_params(cfg, 1);
  p.q_proj = Grid(cfg.embed_dim, cfg.embed_dim);
  const Grid image(cfg.image_size, cfg.image_size, 0.4);
  const double expect = 1.0 / static_cast<double>(cfg.num_tokens());
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const Prediction pr = forward(cfg, p, image, c).prediction();
    for (double v : pr.raw_attention.values()) EXPECT_NEAR(v, expect, 1e-15);
  }
}

TEST(Forward, Deterministic) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 4);
  const Grid img = random_image(cfg, 9);
  const Prediction a = forward(cfg, p, img, 2).prediction();
  const Prediction b = forward(cfg, p, img, 2).prediction();
  EXPECT_EQ(a.raw_attention, b.raw_attention);
  EXPECT_EQ(a.aligned_map, b.aligned_map);
  EXPECT_EQ(a.logit, b.logit);
}

TEST(Forward, ShapeErrors) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 0);
  EXPECT_THROW(forward(cfg, p, Grid(8, 8), 0), DimensionError);
  EXPECT_THROW(forward(cfg, p, Grid(cfg.image_size, cfg.image_size), cfg.num_classes), DimensionError);
}

TEST(Forward, ClassPermutationPermutesOutputs) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 5);
  const Grid img = random_image(cfg, 6);
  const std::vector<std::size_t> fwd{0, 1, 2}, perm{2, 0, 1};
  const ForwardPass a = forward_classes(cfg, p, img, fwd);
  const ForwardPass b = forward_classes(cfg, p, img, perm);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_EQ(b.classes[i].class_id, perm[i]);
    EXPECT_EQ(b.classes[i].pred.aligned_map, a.classes[perm[i]].pred.aligned_map);
    EXPECT_EQ(b.classes[i].pred.logit, a.classes[perm[i]].pred.logit);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const ModelConfig cfg = egl::testing::tiny_model();
  const ModelParams p = init_params(cfg, 2);
  const ForwardPass pass = forward_classes(cfg, p, random_image(cfg, 2));
  std::vector<ClassUpstream> up(cfg.num_classes);
  ModelParams g = ModelParams::zeros(cfg);
  backward(cfg, p, pass, up, g);
  for (double v : g.flatten()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MissingForwardStateIsUsageError) {
  const ModelConfig cfg = egl::testing::tiny_model();
  const ModelParams p = init_params(cfg, 2);
  ModelParams g = ModelParams::zeros(cfg);
  std::vector<ClassUpstream> up(1);
  EXPECT_THROW(backward(cfg, p, ForwardPass{}, up, g), UsageError);
}

TEST(Backward, ClassEmbedGradientIsPerClass) {
  const ModelConfig cfg = egl::testing::tiny_model();
  const ModelParams p = egl::testing::random_params(cfg, 3);
  const ForwardPass pass = forward(cfg, p, random_image(cfg, 3), 1);
  std::vector<ClassUpstream> up(1);
  up[0].d_logit = 0.7;
  up[0].d_aligned = Grid(cfg.grid_side(), cfg.grid_side(), 0.3);
  ModelParams g = ModelParams::zeros(cfg);
  backward(cfg, p, pass, up, g);
  double own = 0.0;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t k = 0; k < cfg.embed_dim; ++k) {
      if (c == 1) {
        own += std::abs(g.class_embed(c, k));
      } else {
        EXPECT_EQ(g.class_embed(c, k), 0.0);
      }
    }
  }
  EXPECT_GT(own, 0.0);
}

// Full objective (CE plus dice-FP through the aligner) against central
// differences for every parameter.
TEST(Backward, FullModelGradientCheck) {
  for (std::size_t image : {8u, 16u}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ModelConfig cfg;
      cfg.image_size = image;
      cfg.patch_size = image == 8 ? 2 : 4;
      cfg.embed_dim = 4 + seed % 5;
      cfg.num_classes = 1 + seed % 3;
      EXPECT_LE(full_model_grad_error(cfg, seed), 1e-4) << "image " << image << " seed " << seed;
    }
  }
}
