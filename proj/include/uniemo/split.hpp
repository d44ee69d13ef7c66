#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uniemo/data.hpp"

namespace uniemo {

/// A train/val/test partition of dataset indices.
struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  double divergence_score = 0.0;
};

/// Per-class 8:1:1 partition: each class's indices are shuffled by a seeded
/// generator and val/test each take round_half_up(n/10) of them.
/// Throws if any class has fewer than 10 samples.
SplitPlan stratified_split(std::span<const int> labels, std::uint64_t seed);

/// Frechet distance between Gaussian fits of two 2-D point clouds (rows):
/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), population covariances.
double frechet_distance_2d(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b);

/// Mean and top-2 principal axes of a row-sample matrix.
struct Pca2 {
  Eigen::RowVectorXd mean;
  Eigen::MatrixX2d axes;  // D x 2, columns are unit eigenvectors
  Eigen::MatrixX2d project(const Eigen::MatrixXd& rows) const;
};
Pca2 fit_pca2(const Eigen::MatrixXd& rows);

/// Train/val divergence of a plan over per-image histogram features (one row
/// per image): PCA fit on train rows, both parts projected, Frechet distance.
double split_divergence(const Eigen::MatrixXd& features, const SplitPlan& plan);

/// Builds candidates from seeds seed..seed+K-1 and keeps the lowest
/// divergence (ties go to the lower seed).
SplitPlan select_best_split(std::span<const int> labels, const Eigen::MatrixXd& features,
                            std::size_t n_candidates, std::uint64_t seed);

/// Manifest-level entry point: loads every image, computes histograms and
/// selects the split. Every record must be labeled.
SplitPlan select_best_split(std::span<const ManifestRecord> records,
                            const std::filesystem::path& base_dir, std::size_t n_candidates,
                            std::uint64_t seed, std::size_t bins_per_channel = 16,
                            std::size_t channels = 3);

/// Records of one split: "train", "val", "test" or "all". With a plan its
/// index lists are used; otherwise records are matched on split_hint, and
/// when no record carries a hint every record belongs to "train".
std::vector<ManifestRecord> select_records(std::span<const ManifestRecord> records,
                                           const SplitPlan* plan, std::string_view split);

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);
void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan load_split_plan(const std::filesystem::path& path);

}  // namespace uniemo
