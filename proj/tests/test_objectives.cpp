#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "uniemo/gradcheck.hpp"
#include "uniemo/objectives.hpp"

namespace uniemo {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

MaskPlan plan_of(std::vector<std::size_t> kept, std::vector<std::size_t> masked) {
  MaskPlan p;
  p.kept_idx = std::move(kept);
  p.masked_idx = std::move(masked);
  return p;
}

// Unshifted exp/log reference.
double naive_ce(const Tensor& x, const std::vector<int>& y) {
  double acc = 0.0;
  for (std::size_t n = 0; n < x.rows(); ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x.at(n, c));
    acc += std::log(s) - x.at(n, static_cast<std::size_t>(y[n]));
  }
  return acc / static_cast<double>(x.rows());
}

TEST(Reconstruction, HandComputedValue) {
  const Tensor target({1, 4, 192}, 0.25);
  Tensor pred = target;
  const std::vector<MaskPlan> plans{plan_of({0, 1, 3}, {2})};
  EXPECT_EQ(masked_reconstruction_loss(pred, target, plans), 0.0);
  for (std::size_t j = 0; j < 192; ++j) pred[2 * 192 + j] += 0.5;
  EXPECT_DOUBLE_EQ(masked_reconstruction_loss(pred, target, plans), 48.0);
}

TEST(Reconstruction, OnlyMaskedPatchesCount) {
  Rng rng(1);
  const Tensor target = random_tensor({2, 6, 5}, rng);
  Tensor pred = random_tensor({2, 6, 5}, rng);
  const std::vector<MaskPlan> plans{plan_of({0, 2, 4}, {1, 3, 5}), plan_of({1, 2, 3}, {0, 4, 5})};
  const double base = masked_reconstruction_loss(pred, target, plans);
  pred[(0 * 6 + 2) * 5 + 1] += 10.0;
  pred[(1 * 6 + 3) * 5 + 4] -= 7.0;
  EXPECT_EQ(masked_reconstruction_loss(pred, target, plans), base);
  pred[(1 * 6 + 4) * 5] += 1.0;
  EXPECT_NE(masked_reconstruction_loss(pred, target, plans), base);
}

TEST(Reconstruction, MatchesBatchMeanOracleAndRejectsBadInput) {
  Rng rng(2);
  const Tensor target = random_tensor({3, 4, 6}, rng);
  const Tensor pred = random_tensor({3, 4, 6}, rng);
  const std::vector<MaskPlan> plans{plan_of({0}, {1, 2, 3}), plan_of({0, 1}, {2, 3}), plan_of({1, 2, 3}, {0})};
  double total = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    double acc = 0.0;
    for (std::size_t i : plans[n].masked_idx) {
      for (std::size_t j = 0; j < 6; ++j) {
        const double d = pred[(n * 4 + i) * 6 + j] - target[(n * 4 + i) * 6 + j];
        acc += d * d;
      }
    }
    total += acc / static_cast<double>(plans[n].masked_idx.size());
  }
  EXPECT_NEAR(masked_reconstruction_loss(pred, target, plans), total / 3.0, 1e-12);
  ad::Tape tape(false);
  EXPECT_NEAR(ad::masked_reconstruction_loss(tape.constant(pred.reshaped({12, 6})), target, plans).value()[0],
              total / 3.0, 1e-12);

  const std::vector<MaskPlan> empty{plan_of({0, 1, 2, 3}, {}), plans[1], plans[2]};
  EXPECT_THROW(masked_reconstruction_loss(pred, target, empty), Error);
  EXPECT_THROW(masked_reconstruction_loss(pred, Tensor({3, 4, 5}), plans), Error);
}

TEST(Reconstruction, GradientIsSupportedOnMaskedRowsOnly) {
  Rng rng(3);
  const Tensor target = random_tensor({8, 3}, rng);
  ParameterStore store;
  Parameter& pred = store.add("pred", random_tensor({8, 3}, rng));
  const std::vector<MaskPlan> plans{plan_of({0, 2}, {1, 3}), plan_of({1, 2, 3}, {0})};
  ad::Tape tape;
  tape.backward(ad::masked_reconstruction_loss(tape.param(pred), target, plans));
  for (std::size_t r = 0; r < 8; ++r) {
    const std::size_t n = r / 4, i = r % 4;
    const auto& m = plans[n].masked_idx;
    const bool masked = std::find(m.begin(), m.end(), i) != m.end();
    for (std::size_t c = 0; c < 3; ++c) {
      const double expected =
          masked ? 2.0 * (pred.value.at(r, c) - target.at(r, c)) / (static_cast<double>(m.size()) * 2.0) : 0.0;
      EXPECT_NEAR(pred.grad.at(r, c), expected, 1e-14);
    }
  }
  const GradCheckResult r = gradient_check("l1");
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(TotalLoss, IsThePlainSum) {
  EXPECT_EQ(total_pretrain_loss(0, 0, 0), 0.0);
  EXPECT_EQ(total_pretrain_loss(1, 0.5, 0.25), 1.75);
  EXPECT_EQ(total_pretrain_loss(0.25, 1, 0.5), total_pretrain_loss(0.5, 0.25, 1));
}

TEST(CrossEntropy, ReferenceValues) {
  for (std::size_t d : {2u, 5u, 8u}) {
    const std::vector<int> y{1, 0};
    EXPECT_NEAR(soft_target_cross_entropy(Tensor({2, d}, 0.3), y), std::log(static_cast<double>(d)), 1e-12);
  }
  Tensor sat({1, 4}, 0.0);
  sat[2] = 50.0;
  const std::vector<int> y2{2};
  const double loss = soft_target_cross_entropy(sat, y2);
  EXPECT_LT(loss, 1e-20);
  EXPECT_GE(loss, 0.0);

  Rng rng(4);
  const Tensor x = random_tensor({2, 6}, rng, 2.0);
  const std::vector<int> y{3, 5};
  EXPECT_NEAR(soft_target_cross_entropy(x, y), naive_ce(x, y), 1e-9);
}

TEST(CrossEntropy, ShiftInvariantNonNegativeAndOverflowSafe) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({3, 4}, rng, 3.0);
    const std::vector<int> y{0, 3, 1};
    Tensor shifted = x;
    for (std::size_t n = 0; n < 3; ++n) {
      const double c = rng.uniform(-100.0, 100.0);
      for (std::size_t k = 0; k < 4; ++k) shifted.at(n, k) += c;
    }
    const double base = soft_target_cross_entropy(x, y);
    EXPECT_GE(base, 0.0);
    EXPECT_NEAR(soft_target_cross_entropy(shifted, y), base, 1e-9);
  }
  const std::vector<int> y{0};
  EXPECT_NEAR(soft_target_cross_entropy(Tensor({1, 3}, {1000.0, 1000.0, 1000.0}), y), std::log(3.0), 1e-12);
}

TEST(CrossEntropy, RejectsBadLabels) {
  const Tensor x({2, 3});
  const std::vector<int> high{0, 3}, negative{-1, 0}, short_labels{0};
  EXPECT_THROW(soft_target_cross_entropy(x, high), Error);
  EXPECT_THROW(soft_target_cross_entropy(x, negative), Error);
  EXPECT_THROW(soft_target_cross_entropy(x, short_labels), Error);
  const std::vector<int> one{0, 0};
  EXPECT_THROW(soft_target_cross_entropy(Tensor({2, 1}), one), Error);
}

TEST(MixupLoss, Reductions) {
  Rng rng(6);
  const Tensor x = random_tensor({4, 5}, rng);
  const std::vector<int> ya{0, 1, 2, 3}, yb{4, 0, 1, 1};
  const double ce_a = soft_target_cross_entropy(x, ya), ce_b = soft_target_cross_entropy(x, yb);
  EXPECT_DOUBLE_EQ(mixup_cross_entropy(x, ya, yb, 1.0), ce_a);
  EXPECT_DOUBLE_EQ(mixup_cross_entropy(x, ya, yb, 0.0), ce_b);
  EXPECT_NEAR(mixup_cross_entropy(x, ya, yb, 0.3), 0.3 * ce_a + 0.7 * ce_b, 1e-12);
  for (double lambda : {0.0, 0.2, 0.77, 1.0}) EXPECT_NEAR(mixup_cross_entropy(x, ya, ya, lambda), ce_a, 1e-12);
  EXPECT_THROW(mixup_cross_entropy(x, ya, yb, -0.1), Error);
  EXPECT_THROW(mixup_cross_entropy(x, ya, yb, 1.1), Error);

  ad::Tape tape(false);
  EXPECT_NEAR(ad::mixup_cross_entropy(tape.constant(x), ya, yb, 0.3).value()[0], 0.3 * ce_a + 0.7 * ce_b, 1e-12);
  EXPECT_NEAR(ad::soft_target_cross_entropy(tape.constant(x), ya).value()[0], ce_a, 1e-12);
}

TEST(MixupLoss, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  ParameterStore store;
  Parameter& x = store.add("logits", random_tensor({4, 5}, rng));
  const std::vector<int> ya{0, 1, 2, 3}, yb{4, 0, 1, 1};
  const auto r = check_gradients(store, [&](ad::Tape& t) { return ad::mixup_cross_entropy(t.param(x), ya, yb, 0.35); });
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  EXPECT_LT(gradient_check("ce").max_rel_error, 1e-4);
}

TEST(Accuracy, CountsMatches) {
  const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 0, 1};
  std::vector<int> preds = labels;
  EXPECT_EQ(accuracy(preds, labels), 1.0);
  preds[4] = 7;
  EXPECT_DOUBLE_EQ(accuracy(preds, labels), 0.9);
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> shuffled = labels;
    const auto perm = rng.permutation(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = labels[perm[i]];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += shuffled[i] == labels[i] ? 1 : 0;
    EXPECT_DOUBLE_EQ(accuracy(shuffled, labels), static_cast<double>(hits) / 10.0);
  }
  EXPECT_THROW(accuracy({}, {}), Error);
  const std::vector<int> two{0, 1};
  EXPECT_THROW(accuracy(two, labels), Error);
}

TEST(Accuracy, ArgmaxResolvesTiesToLowestIndex) {
  const Tensor x({3, 3}, {0.1, 0.5, 0.5, 2.0, 2.0, 2.0, -1.0, -3.0, -0.5});
  EXPECT_EQ(argmax_rows(x), (std::vector<int>{1, 0, 2}));
}

}  // namespace
}  // namespace uniemo
