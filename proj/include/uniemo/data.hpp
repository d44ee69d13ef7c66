#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uniemo/rng.hpp"
#include "uniemo/tensor.hpp"

namespace uniemo {

/// Person bounding box in source-image pixels, half-open [x0, x1) x [y0, y1).
struct PersonBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const PersonBox&, const PersonBox&) = default;
};

/// Label attributes in manifest order (emotion, object, scene, ...).
using Attributes = std::vector<std::pair<std::string, std::string>>;

/// One line of a manifest.
///
/// Manifests are JSON Lines: one object per line with keys
///   image_path  (string, required)
///   label       (integer class id, optional)
///   attributes  (object of string values, optional, order preserved)
///   person_box  ([x0, y0, x1, y1] in pixels, optional)
///   split_hint  (string, optional)
///   caption     (string, optional; written by the caption command)
/// Blank lines are skipped. Relative image paths resolve against the
/// manifest's directory.
struct ManifestRecord {
  std::string image_path;
  std::optional<int> label;
  Attributes attributes;
  std::optional<PersonBox> person_box;
  std::optional<std::string> split_hint;
  std::optional<std::string> caption;
  std::size_t line = 0;  // 1-based source line, 0 when built in memory
};

/// Throws Error("<path>:<line>: ...") for malformed records.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
std::vector<ManifestRecord> parse_manifest(std::string_view text, std::string_view source = "<memory>");
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

/// "A photo evoking {emotion}[, featuring {object}][, in a {scene} scene]"
/// followed by ", with {name} {value}" for every other attribute in order.
std::string build_caption(const Attributes& attributes);

/// Crop-and-resize of the person box back to the full image size; the
/// image itself when no box is given.
Tensor derive_person_map(const Tensor& pixels, const std::optional<PersonBox>& box);

/// Per-channel normalized histograms, concatenated channel-major.
std::vector<double> color_histogram(const Tensor& pixels, std::size_t bins_per_channel);

/// A training example after loading: both streams at model resolution.
struct ImageSample {
  Tensor pixels;         // H x W x C, [0, 1]
  Tensor person_pixels;  // same shape
  std::string caption;
  std::optional<int> label;
  std::string source;    // image path, used by feature-file teachers
};

/// Loads, crops and resizes one record to image_size x image_size. The
/// caption is the record's caption if present, else built from attributes
/// (empty when there is no emotion attribute).
ImageSample load_sample(const ManifestRecord& record, const std::filesystem::path& base_dir,
                        std::size_t image_size, std::size_t channels);
std::vector<ImageSample> load_samples(std::span<const ManifestRecord> records,
                                      const std::filesystem::path& base_dir,
                                      std::size_t image_size, std::size_t channels);

/// Stacks sample pixels (or person maps) into N x H x W x C.
Tensor stack_pixels(std::span<const ImageSample> samples, bool person = false);
Tensor stack_pixels(std::span<const ImageSample* const> samples, bool person = false);

struct MixupBatch {
  Tensor x;
  std::vector<int> y_a;
  std::vector<int> y_b;
  double lambda = 1.0;
  std::vector<std::size_t> permutation;
};

/// lambda ~ Beta(alpha, alpha), random pairing; x_mix = l*x + (1-l)*x[perm].
MixupBatch mixup_batch(const Tensor& x, std::span<const int> y, double alpha, Rng& rng);
/// Deterministic core used by mixup_batch (and by tests forcing lambda).
MixupBatch mixup_with(const Tensor& x, std::span<const int> y, double lambda,
                      std::vector<std::size_t> permutation);

}  // namespace uniemo
