#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uniemo/checkpoint.hpp"
#include "uniemo/training.hpp"

namespace uniemo {

struct EvalReport {
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<std::size_t> class_counts;
  /// Correct fraction per class; 0 for classes without samples.
  std::vector<double> per_class_accuracy;
  /// confusion[true][predicted] counts.
  std::vector<std::vector<std::size_t>> confusion;
};

EvalReport make_eval_report(std::span<const int> predictions, std::span<const int> labels,
                            std::size_t num_classes);
EvalReport evaluate(const Classifier& model, std::span<const ImageSample> samples);
/// Rebuilds the classifier stored in a fine-tune checkpoint and evaluates it.
EvalReport evaluate_split(const Checkpoint& ckpt, std::span<const ImageSample> samples);
std::string eval_report_to_json(const EvalReport& report);

/// Grad-CAM over patch tokens of the last encoder block.
///
/// The target layer is the block output when the head pools patch tokens,
/// and the block's first LayerNorm output when it reads the CLS token (the
/// block output's patch rows do not reach a CLS-only head). Channel
/// weights are mean gradients over patch tokens; the cam is
/// ReLU(sum_c w_c A_c) on the patch grid, bilinearly resized to the image
/// size and min-max normalized. An all-zero cam stays zero; a constant
/// positive cam maps to ones.
Tensor gradcam_heatmap(const Classifier& model, const Tensor& image, int target_class);

/// 0.5 * base + 0.5 * heat * jet(heat), three channels.
Tensor heatmap_overlay(const Tensor& heatmap, const Tensor& base);
/// Writes heatmap_overlay() as a lossless image (PNG or PPM by extension).
void export_heatmap(const Tensor& heatmap, const Tensor& base, const std::filesystem::path& path);

}  // namespace uniemo
