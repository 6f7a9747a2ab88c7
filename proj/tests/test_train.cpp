#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "egl/adamw.hpp"
#include "egl/report_io.hpp"
#include "egl/train.hpp"
#include "support.hpp"

using namespace egl;

namespace {

TrainConfig quick_train(int level, AlignmentMode mode, std::uint64_t seed = 1) {
  TrainConfig t;
  t.optimizer.learning_rate = 5e-3;
  t.max_epochs = 3;
  t.patience = 2;
  t.batch_size = 16;
  t.alignment_level = level;
  t.alignment_mode = mode;
  t.seed = seed;
  return t;
}

const Dataset& tiny_dataset() {
  static const Dataset d = generate(egl::testing::tiny_data(11));
  return d;
}

std::string dump(const RunResult& r) { return to_json(r).dump(); }

}  // namespace

TEST(AdamW, ZeroGradientNoDecayIsFixedPoint) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g(3, 0.0);
  AdamWState s(3);
  AdamWHyper h;
  h.weight_decay = 0.0;
  adamw_step(p, g, s, h);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(AdamW, FirstStepBiasCorrectionCancels) {
  std::vector<double> p{1.0};
  AdamWState s(1);
  AdamWHyper h;
  h.learning_rate = 0.1;
  h.weight_decay = 0.0;
  adamw_step(p, std::vector<double>{1.0}, s, h);
  EXPECT_NEAR(p[0], 1.0 - 0.1 / (1.0 + h.eps), 1e-15);
  EXPECT_NEAR(p[0], 0.9, 1e-7);
}

TEST(AdamW, DecoupledDecay) {
  std::vector<double> p{2.0, -4.0};
  AdamWState s(2);
  AdamWHyper h;
  h.learning_rate = 0.01;
  h.weight_decay = 0.1;
  adamw_step(p, std::vector<double>{0.0, 0.0}, s, h);
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.01 * 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(p[1], -4.0 - 0.01 * 0.1 * -4.0);
}

TEST(AdamW, NonFiniteGradientDiverges) {
  std::vector<double> p{1.0};
  AdamWState s(1);
  EXPECT_THROW(adamw_step(p, std::vector<double>{std::numeric_limits<double>::infinity()}, s, AdamWHyper{}),
               DivergenceError);
}

TEST(RatioSubset, SizeAndNesting) {
  const std::size_t n = 2000;
  std::vector<std::vector<std::size_t>> subsets;
  for (int ratio : {25, 50, 75, 100}) {
    const auto s = ratio_subset(n, ratio, 3);
    EXPECT_EQ(s.size(), static_cast<std::size_t>(ratio) * n / 100);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    subsets.push_back(s);
  }
  EXPECT_EQ(ratio_subset(1999, 25, 3).size(), 499u);
  for (std::size_t k = 0; k + 1 < subsets.size(); ++k) {
    EXPECT_TRUE(std::includes(subsets[k + 1].begin(), subsets[k + 1].end(), subsets[k].begin(), subsets[k].end()));
  }
  EXPECT_NE(ratio_subset(n, 25, 3), ratio_subset(n, 25, 4));
}

TEST(Eligibility, BoundariesAndNesting) {
  const SampleSet& train = tiny_dataset().train;
  const auto subset = ratio_subset(train.size(), 100, 5);
  std::size_t positives = 0;
  for (std::size_t i : subset) positives += train[i].any_positive();

  const auto none = eligibility(train, subset, 0, 5);
  EXPECT_EQ(std::count(none.begin(), none.end(), true), 0);
  const auto all = eligibility(train, subset, 100, 5);
  for (std::size_t i = 0; i < subset.size(); ++i) EXPECT_EQ(all[i], train[subset[i]].any_positive());

  std::vector<bool> prev = none;
  for (int level : {25, 50, 75, 100}) {
    const auto cur = eligibility(train, subset, level, 5);
    EXPECT_EQ(static_cast<std::size_t>(std::count(cur.begin(), cur.end(), true)),
              static_cast<std::size_t>(level) * positives / 100);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (prev[i]) {
        EXPECT_TRUE(cur[i]) << "level " << level;
      }
      if (cur[i]) {
        EXPECT_TRUE(train[subset[i]].any_positive());  // never a negative sample
      }
    }
    prev = cur;
  }
}

TEST(TrainConfig, Validation) {
  EXPECT_THROW(quick_train(30, AlignmentMode::human).validate(), ConfigError);
  EXPECT_THROW(quick_train(0, AlignmentMode::human).validate(), ConfigError);
  EXPECT_THROW(quick_train(50, AlignmentMode::none).validate(), ConfigError);
  EXPECT_NO_THROW(quick_train(50, AlignmentMode::random).validate());
  EXPECT_EQ(parse_alignment_mode("random"), AlignmentMode::random);
  EXPECT_THROW(parse_alignment_mode("fuzzy"), ConfigError);
}

TEST(Train, DeterministicBitForBit) {
  const ModelConfig m = egl::testing::tiny_model();
  for (AlignmentMode mode : {AlignmentMode::human, AlignmentMode::random}) {
    const TrainOutput a = train(m, quick_train(50, mode), tiny_dataset());
    const TrainOutput b = train(m, quick_train(50, mode), tiny_dataset());
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(dump(a.result), dump(b.result));
  }
}

// With level 0 the alignment loss is never evaluated, so its settings cannot
// influence the run.
TEST(Train, LevelZeroIsCrossEntropyBaseline) {
  const ModelConfig m = egl::testing::tiny_model();
  TrainConfig a = quick_train(0, AlignmentMode::none);
  TrainConfig b = a;
  b.dice.w_fp = 9.0;
  b.dice.alpha = 0.0;
  EXPECT_EQ(train(m, a, tiny_dataset()).params, train(m, b, tiny_dataset()).params);

  TrainConfig c = quick_train(100, AlignmentMode::human);
  TrainConfig d = c;
  d.dice.w_fp = 9.0;
  EXPECT_NE(train(m, c, tiny_dataset()).params, train(m, d, tiny_dataset()).params);
}

TEST(Train, HumanAndRandomAlignmentDiffer) {
  const ModelConfig m = egl::testing::tiny_model();
  EXPECT_NE(train(m, quick_train(100, AlignmentMode::human), tiny_dataset()).params,
            train(m, quick_train(100, AlignmentMode::random), tiny_dataset()).params);
}

TEST(Train, EarlyStoppingKeepsBestEpoch) {
  const ModelConfig m = egl::testing::tiny_model();
  TrainConfig t = quick_train(0, AlignmentMode::none);
  t.max_epochs = 12;
  t.patience = 2;
  t.optimizer.learning_rate = 0.05;  // noisy enough to stop early
  const TrainOutput out = train(m, t, tiny_dataset());
  const auto& h = out.result.val_auc_history;
  ASSERT_EQ(h.size(), out.result.epochs_trained);
  EXPECT_EQ(out.result.best_val_auc, *std::max_element(h.begin(), h.end()));
  EXPECT_EQ(h[out.result.best_epoch], out.result.best_val_auc);
  EXPECT_LE(out.result.epochs_trained, out.result.best_epoch + t.patience + 1);
  // The returned parameters reproduce the best validation AUC.
  EXPECT_EQ(macro_auc(evaluate_samples(m, out.params, tiny_dataset().val)), out.result.best_val_auc);
}

TEST(Train, NoPositivesIsTrainingError) {
  Dataset d = tiny_dataset();
  for (Sample& s : d.train) {
    std::fill(s.labels.begin(), s.labels.end(), 0);
    std::fill(s.masks.begin(), s.masks.end(), std::nullopt);
  }
  EXPECT_THROW(train(egl::testing::tiny_model(), quick_train(0, AlignmentMode::none), d), TrainingError);
}

TEST(Train, NonFiniteInputDiverges) {
  Dataset d = tiny_dataset();
  for (Sample& s : d.train) s.image[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(egl::testing::tiny_model(), quick_train(0, AlignmentMode::none), d);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 0u);
    EXPECT_EQ(e.batch(), 0u);
  }
}

TEST(Train, ModelAndDataMustAgree) {
  ModelConfig m = egl::testing::tiny_model();
  m.image_size = 32;
  EXPECT_THROW(train(m, quick_train(0, AlignmentMode::none), tiny_dataset()), DimensionError);
}
