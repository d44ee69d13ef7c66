#include "uniemo/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "uniemo/image.hpp"

namespace uniemo {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Piecewise-linear jet colormap.
void jet(double v, double rgb[3]) {
  rgb[0] = clamp01(1.5 - std::abs(4.0 * v - 3.0));
  rgb[1] = clamp01(1.5 - std::abs(4.0 * v - 2.0));
  rgb[2] = clamp01(1.5 - std::abs(4.0 * v - 1.0));
}

}  // namespace

EvalReport make_eval_report(std::span<const int> predictions, std::span<const int> labels,
                            std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw Error("evaluation: " + std::to_string(predictions.size()) + " predictions vs " +
                std::to_string(labels.size()) + " labels");
  }
  EvalReport r;
  r.total = labels.size();
  r.class_counts.assign(num_classes, 0);
  r.per_class_accuracy.assign(num_classes, 0.0);
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || p < 0 || static_cast<std::size_t>(y) >= num_classes ||
        static_cast<std::size_t>(p) >= num_classes) {
      throw Error("evaluation: class id outside [0, " + std::to_string(num_classes) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    ++r.class_counts[static_cast<std::size_t>(y)];
    hits += y == p;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (r.class_counts[c] > 0) {
      r.per_class_accuracy[c] =
          static_cast<double>(r.confusion[c][c]) / static_cast<double>(r.class_counts[c]);
    }
  }
  r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(r.total);
  return r;
}

EvalReport evaluate(const Classifier& model, std::span<const ImageSample> samples) {
  if (samples.empty()) throw Error("evaluation set is empty");
  const auto labels = sample_labels(samples, model.config.num_classes);
  return make_eval_report(predict_labels(model, samples), labels, model.config.num_classes);
}

EvalReport evaluate_split(const Checkpoint& ckpt, std::span<const ImageSample> samples) {
  const auto model = Classifier::from_checkpoint(ckpt);
  return evaluate(*model, samples);
}

std::string eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["total"] = r.total;
  j["accuracy"] = r.accuracy;
  j["class_counts"] = r.class_counts;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["confusion"] = r.confusion;
  return j.dump(2);
}

Tensor gradcam_heatmap(const Classifier& model, const Tensor& image, int target_class) {
  const auto classes = model.config.num_classes;
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= classes) {
    throw Error("target class " + std::to_string(target_class) + " outside [0, " +
                std::to_string(classes) + ")");
  }
  if (image.rank() != 3) throw Error("Grad-CAM expects an H x W x C image");
  const BackboneConfig& bb = model.config.backbone;
  const std::size_t h = image.dim(0), w = image.dim(1);
  const Tensor input = (h == bb.image_size && w == bb.image_size)
                           ? image
                           : resize_bilinear(image, bb.image_size, bb.image_size);

  ad::Tape tape;
  EncodedState state;
  std::vector<TransformerBlock::Trace> traces;
  const ad::Var logits = model.logits(tape, input, &state, &traces);
  if (traces.empty()) throw Error("Grad-CAM needs an encoder with at least one block");
  const ad::Var layer =
      model.config.pool == PoolMode::kCls ? traces.back().norm1_out : traces.back().output;
  Tensor onehot({1, classes});
  onehot[static_cast<std::size_t>(target_class)] = 1.0;
  tape.backward(ad::sum(ad::mul(logits, tape.constant(std::move(onehot)))));

  const Tensor& act = layer.value();
  const Tensor* grad = tape.grad(layer);
  const std::size_t np = bb.num_patches(), width = act.cols();
  std::vector<double> weights(width, 0.0);
  if (grad != nullptr) {
    for (std::size_t p = 1; p <= np; ++p) {
      for (std::size_t c = 0; c < width; ++c) weights[c] += grad->at(p, c);
    }
    for (double& v : weights) v /= static_cast<double>(np);
  }
  const std::size_t grid = bb.grid();
  Tensor cam({grid, grid, 1});
  for (std::size_t p = 0; p < np; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < width; ++c) s += weights[c] * act.at(p + 1, c);
    cam[p] = std::max(s, 0.0);
  }
  Tensor heat = resize_bilinear(cam, h, w);
  const auto [lo, hi] = std::minmax_element(heat.data().begin(), heat.data().end());
  const double mn = *lo, mx = *hi;
  for (double& v : heat.data()) {
    if (mx <= 0.0) {
      v = 0.0;
    } else if (mx - mn <= 1e-12 * mx) {
      v = 1.0;
    } else {
      v = clamp01((v - mn) / (mx - mn));
    }
  }
  heat.reshape({h, w});
  return heat;
}

Tensor heatmap_overlay(const Tensor& heatmap, const Tensor& base) {
  if (base.rank() != 3 || (base.dim(2) != 1 && base.dim(2) != 3)) {
    throw Error("heatmap base must be H x W x 1 or H x W x 3");
  }
  const std::size_t h = base.dim(0), w = base.dim(1), ch = base.dim(2);
  if (heatmap.size() != h * w) {
    throw Error("heatmap " + shape_str(heatmap.shape()) + " does not match base image " +
                shape_str(base.shape()));
  }
  Tensor out({h, w, 3});
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = clamp01(heatmap[i]);
    double rgb[3];
    jet(v, rgb);
    for (std::size_t c = 0; c < 3; ++c) {
      const double b = base[i * ch + (ch == 1 ? 0 : c)];
      out[i * 3 + c] = 0.5 * b + 0.5 * v * rgb[c];
    }
  }
  return out;
}

void export_heatmap(const Tensor& heatmap, const Tensor& base, const std::filesystem::path& path) {
  write_image(path, heatmap_overlay(heatmap, base));
}

}  // namespace uniemo
