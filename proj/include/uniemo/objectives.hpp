#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uniemo/autodiff.hpp"
#include "uniemo/backbone.hpp"
#include "uniemo/tensor.hpp"

namespace uniemo {

/// Per-step loss values written to the metrics CSV.
struct LossReport {
  std::int64_t step = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double lt = 0.0;
  double lf = 0.0;
  double acc = 0.0;
};

/// Mean over samples of (1/|M|) sum_{i in M} |S'_i - S_i|^2.
/// `pred` and `target` are N x L x P (or [N*L x P]); one plan per sample.
double masked_reconstruction_loss(const Tensor& pred, const Tensor& target,
                                  std::span<const MaskPlan> plans);

double total_pretrain_loss(double l1, double l2, double l3);

/// (1/N) sum_n (logsumexp(x_n) - x_{n,y_n}), max-shifted.
double soft_target_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// lambda * CE(y_a) + (1 - lambda) * CE(y_b).
double mixup_cross_entropy(const Tensor& logits, std::span<const int> y_a,
                           std::span<const int> y_b, double lambda);

/// Fraction of positions where predictions equal labels.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

namespace ad {
/// Differentiable masked reconstruction loss; target is a constant.
Var masked_reconstruction_loss(Var pred, const Tensor& target, std::span<const MaskPlan> plans);
Var soft_target_cross_entropy(Var logits, std::span<const int> labels);
Var mixup_cross_entropy(Var logits, std::span<const int> y_a, std::span<const int> y_b,
                        double lambda);
}  // namespace ad

}  // namespace uniemo
