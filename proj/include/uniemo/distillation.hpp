#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "uniemo/autodiff.hpp"
#include "uniemo/data.hpp"
#include "uniemo/tensor.hpp"

namespace uniemo {

// ---- plain tensor forms ---------------------------------------------------

/// Each row divided by its Euclidean norm. Rows with norm < 1e-12 throw
/// "degenerate feature row n" unless `floor` > 0, in which case the norm is
/// clamped to `floor`.
Tensor row_normalize(const Tensor& x, double floor = 0.0);

/// U V^T with every row renormalized to unit length. Inputs are N x C
/// row-normalized matrices; the result is N x N.
Tensor correlation_matrix(const Tensor& u, const Tensor& v);

/// 1 - mean_n <A_n, C_n> for row-normalized A, C (N x N).
double similarity_contrastive_loss(const Tensor& a, const Tensor& c);

/// 1 - mean_n <Y_n, O_n> / (|Y_n| |O_n|).
double feature_similarity_loss(const Tensor& y, const Tensor& o);

// ---- differentiable forms -------------------------------------------------

namespace ad {
Var correlation_matrix(Var u, Var v, double floor = 0.0);
Var similarity_contrastive_loss(Var a, Var c);
Var feature_similarity_loss(Var y, Var o);
}  // namespace ad

// ---- teachers -------------------------------------------------------------

/// Frozen text/image encoder pair. Implementations are read-only after
/// construction and safe for concurrent calls.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual std::size_t dim() const = 0;
  /// N strings -> N x dim
  virtual Tensor encode_text(std::span<const std::string> texts) const = 0;
  /// N samples -> N x dim
  virtual Tensor encode_image(std::span<const ImageSample* const> samples) const = 0;
};

/// Deterministic stand-in teacher.
///
/// Text: lower-cased alphanumeric tokens are hashed (FNV-1a) into a signed
/// 256-bucket bag, then projected by a seeded Gaussian matrix.
/// Image: each channel is mean-pooled onto an 8 x 8 grid, centered at 0.5
/// and projected by a second seeded matrix plus bias. Rows are unit-norm.
class StubTeacher final : public Teacher {
 public:
  StubTeacher(std::uint64_t seed, std::size_t dim, std::size_t channels = 3);

  std::size_t dim() const override { return dim_; }
  Tensor encode_text(std::span<const std::string> texts) const override;
  Tensor encode_image(std::span<const ImageSample* const> samples) const override;

  static constexpr std::size_t kTextBuckets = 256;
  static constexpr std::size_t kGrid = 8;

 private:
  std::size_t dim_;
  std::size_t channels_;
  Tensor text_proj_;   // buckets x dim
  Tensor image_proj_;  // (grid*grid*channels) x dim
  Tensor image_bias_;  // dim
};

/// Teacher backed by precomputed features (e.g. exported from a CLIP model).
///
/// File format: JSON Lines, each line either
///   {"text": "<caption>", "features": [f0, f1, ...]}  or
///   {"image_path": "<manifest image_path>", "features": [...]}
/// All vectors share one length. Lookups that miss throw.
class FeatureFileTeacher final : public Teacher {
 public:
  explicit FeatureFileTeacher(const std::filesystem::path& path);

  std::size_t dim() const override { return dim_; }
  Tensor encode_text(std::span<const std::string> texts) const override;
  Tensor encode_image(std::span<const ImageSample* const> samples) const override;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> text_;
  std::unordered_map<std::string, std::vector<double>> image_;
};

std::unique_ptr<Teacher> stub_teacher(std::uint64_t seed, std::size_t dim, std::size_t channels = 3);

}  // namespace uniemo
