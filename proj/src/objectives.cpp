#include "uniemo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace uniemo {

namespace {

struct ReconLayout {
  std::size_t batch;
  std::size_t patches;
  std::size_t width;
};

ReconLayout check_recon(const Tensor& pred, const Tensor& target, std::span<const MaskPlan> plans) {
  if (pred.size() != target.size() || pred.cols() != target.cols()) {
    throw Error("masked_reconstruction_loss: prediction " + shape_str(pred.shape()) +
                " vs target " + shape_str(target.shape()));
  }
  if (plans.empty()) throw Error("masked_reconstruction_loss: no mask plans");
  const std::size_t batch = plans.size();
  const std::size_t width = pred.cols();
  if (pred.rows() % batch != 0) {
    throw Error("masked_reconstruction_loss: " + std::to_string(pred.rows()) +
                " patch rows do not divide into " + std::to_string(batch) + " samples");
  }
  const std::size_t patches = pred.rows() / batch;
  for (std::size_t n = 0; n < batch; ++n) {
    if (plans[n].masked_idx.empty()) throw Error("masked_reconstruction_loss: empty mask set");
    for (std::size_t i : plans[n].masked_idx) {
      if (i >= patches) throw Error("masked_reconstruction_loss: masked index out of range");
    }
  }
  return {batch, patches, width};
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (classes < 2) throw Error("cross entropy needs at least 2 classes");
  if (labels.size() != rows) {
    throw Error("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(rows) + " rows");
  }
  if (rows == 0) throw Error("cross entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error("label " + std::to_string(y) + " out of range [0, " + std::to_string(classes) + ")");
    }
  }
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error("mixup lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
}

double logsumexp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

double masked_reconstruction_loss(const Tensor& pred, const Tensor& target,
                                  std::span<const MaskPlan> plans) {
  const auto [batch, patches, width] = check_recon(pred, target, plans);
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    double acc = 0.0;
    for (std::size_t i : plans[n].masked_idx) {
      const std::size_t base = (n * patches + i) * width;
      for (std::size_t j = 0; j < width; ++j) {
        const double d = pred[base + j] - target[base + j];
        acc += d * d;
      }
    }
    total += acc / static_cast<double>(plans[n].masked_idx.size());
  }
  return total / static_cast<double>(batch);
}

double total_pretrain_loss(double l1, double l2, double l3) { return l1 + l2 + l3; }

double soft_target_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  double acc = 0.0;
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto row = logits.row(n);
    acc += logsumexp(row) - row[static_cast<std::size_t>(labels[n])];
  }
  return acc / static_cast<double>(logits.rows());
}

double mixup_cross_entropy(const Tensor& logits, std::span<const int> y_a,
                           std::span<const int> y_b, double lambda) {
  check_lambda(lambda);
  return lambda * soft_target_cross_entropy(logits, y_a) +
         (1.0 - lambda) * soft_target_cross_entropy(logits, y_b);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw Error("accuracy of an empty set");
  if (predictions.size() != labels.size()) {
    throw Error("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                std::to_string(labels.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto row = logits.row(n);
    out[n] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace ad {

Var masked_reconstruction_loss(Var pred, const Tensor& target, std::span<const MaskPlan> plans) {
  const Tensor& pv = pred.value();
  const auto layout = check_recon(pv, target, plans);
  Tensor out({1}, uniemo::masked_reconstruction_loss(pv, target, plans));
  auto masks = std::make_shared<std::vector<MaskPlan>>(plans.begin(), plans.end());
  auto tgt = std::make_shared<Tensor>(target);
  const std::size_t ip = pred.id();
  return pred.tape().record(std::move(out), {pred}, [ip, layout, masks, tgt](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0];
    const Tensor& p = tp.value(ip);
    Tensor& gp = tp.grad_buffer(ip);
    for (std::size_t n = 0; n < layout.batch; ++n) {
      const auto& masked = (*masks)[n].masked_idx;
      const double c = 2.0 * g / (static_cast<double>(masked.size()) * static_cast<double>(layout.batch));
      for (std::size_t i : masked) {
        const std::size_t base = (n * layout.patches + i) * layout.width;
        for (std::size_t j = 0; j < layout.width; ++j) {
          gp[base + j] += c * (p[base + j] - (*tgt)[base + j]);
        }
      }
    }
  });
}

Var soft_target_cross_entropy(Var logits, std::span<const int> labels) {
  return mixup_cross_entropy(logits, labels, labels, 1.0);
}

Var mixup_cross_entropy(Var logits, std::span<const int> y_a, std::span<const int> y_b,
                        double lambda) {
  check_lambda(lambda);
  const Tensor& x = logits.value();
  const std::size_t rows = x.rows(), classes = x.cols();
  check_labels(y_a, rows, classes);
  check_labels(y_b, rows, classes);
  Tensor out({1}, uniemo::mixup_cross_entropy(x, y_a, y_b, lambda));
  auto ya = std::make_shared<std::vector<int>>(y_a.begin(), y_a.end());
  auto yb = std::make_shared<std::vector<int>>(y_b.begin(), y_b.end());
  const std::size_t ix = logits.id();
  return logits.tape().record(std::move(out), {logits},
                              [ix, ya, yb, lambda, rows, classes](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0] / static_cast<double>(rows);
    const Tensor& xv = tp.value(ix);
    Tensor& gx = tp.grad_buffer(ix);
    for (std::size_t n = 0; n < rows; ++n) {
      const auto row = xv.row(n);
      const double m = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double v : row) s += std::exp(v - m);
      for (std::size_t c = 0; c < classes; ++c) {
        gx[n * classes + c] += g * std::exp(row[c] - m) / s;
      }
      gx[n * classes + static_cast<std::size_t>((*ya)[n])] -= g * lambda;
      gx[n * classes + static_cast<std::size_t>((*yb)[n])] -= g * (1.0 - lambda);
    }
  });
}

}  // namespace ad

}  // namespace uniemo
