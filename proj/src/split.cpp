#include "uniemo/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "uniemo/image.hpp"
#include "uniemo/rng.hpp"

namespace uniemo {

SplitPlan stratified_split(std::span<const int> labels, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [label, idx] : by_class) {
    if (idx.size() < 10) {
      throw Error("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                  " samples; an 8:1:1 split needs at least 10");
    }
  }
  SplitPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  for (const auto& [label, idx] : by_class) {
    const std::vector<std::size_t> perm = rng.permutation(idx.size());
    const std::size_t n = idx.size();
    const std::size_t n_val = (n + 5) / 10;
    const std::size_t n_test = (n + 5) / 10;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = idx[perm[k]];
      if (k < n_val) {
        plan.val.push_back(i);
      } else if (k < n_val + n_test) {
        plan.test.push_back(i);
      } else {
        plan.train.push_back(i);
      }
    }
  }
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

double frechet_distance_2d(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error("Frechet distance of an empty cloud");
  const Eigen::RowVector2d ma = a.colwise().mean();
  const Eigen::RowVector2d mb = b.colwise().mean();
  const Eigen::MatrixX2d ca = a.rowwise() - ma;
  const Eigen::MatrixX2d cb = b.rowwise() - mb;
  const Eigen::Matrix2d sa = (ca.transpose() * ca) / static_cast<double>(a.rows());
  const Eigen::Matrix2d sb = (cb.transpose() * cb) / static_cast<double>(b.rows());
  // For 2x2 PSD products, tr(sqrt(M)) = sqrt(tr M + 2 sqrt(det M)).
  const Eigen::Matrix2d m = sa * sb;
  const double det = std::max(0.0, m.determinant());
  const double tr_sqrt = std::sqrt(std::max(0.0, m.trace() + 2.0 * std::sqrt(det)));
  const double d = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

Eigen::MatrixX2d Pca2::project(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - mean) * axes;
}

Pca2 fit_pca2(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 1 || rows.cols() < 2) throw Error("PCA needs at least one row and two features");
  Pca2 p;
  p.mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - p.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("PCA eigendecomposition failed");
  // Eigenvalues are ascending.
  const Eigen::Index d = cov.rows();
  p.axes.resize(d, 2);
  p.axes.col(0) = eig.eigenvectors().col(d - 1);
  p.axes.col(1) = eig.eigenvectors().col(d - 2);
  return p;
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

double split_divergence(const Eigen::MatrixXd& features, const SplitPlan& plan) {
  const Eigen::MatrixXd train = take_rows(features, plan.train);
  const Pca2 pca = fit_pca2(train);
  return frechet_distance_2d(pca.project(train), pca.project(take_rows(features, plan.val)));
}

SplitPlan select_best_split(std::span<const int> labels, const Eigen::MatrixXd& features,
                            std::size_t n_candidates, std::uint64_t seed) {
  if (n_candidates == 0) throw Error("split selection needs at least one candidate");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error("feature rows do not match label count");
  }
  SplitPlan best;
  bool have = false;
  for (std::size_t k = 0; k < n_candidates; ++k) {
    SplitPlan plan = stratified_split(labels, seed + k);
    plan.divergence_score = split_divergence(features, plan);
    if (!have || plan.divergence_score < best.divergence_score) {
      best = std::move(plan);
      have = true;
    }
  }
  return best;
}

SplitPlan select_best_split(std::span<const ManifestRecord> records,
                            const std::filesystem::path& base_dir, std::size_t n_candidates,
                            std::uint64_t seed, std::size_t bins_per_channel,
                            std::size_t channels) {
  std::vector<int> labels;
  Eigen::MatrixXd features(static_cast<Eigen::Index>(records.size()),
                           static_cast<Eigen::Index>(bins_per_channel * channels));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ManifestRecord& r = records[i];
    if (!r.label) {
      throw Error("manifest line " + std::to_string(r.line) + ": split selection needs a label");
    }
    labels.push_back(*r.label);
    std::filesystem::path p(r.image_path);
    if (p.is_relative()) p = base_dir / p;
    const std::vector<double> h = color_histogram(read_image(p, channels), bins_per_channel);
    for (std::size_t j = 0; j < h.size(); ++j) {
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h[j];
    }
  }
  return select_best_split(labels, features, n_candidates, seed);
}

std::string split_plan_to_json(const SplitPlan& plan) {
  nlohmann::ordered_json j;
  j["seed"] = plan.seed;
  j["divergence_score"] = plan.divergence_score;
  j["train"] = plan.train;
  j["val"] = plan.val;
  j["test"] = plan.test;
  return j.dump(2);
}

SplitPlan split_plan_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitPlan p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.divergence_score = j.at("divergence_score").get<double>();
    p.train = j.at("train").get<std::vector<std::size_t>>();
    p.val = j.at("val").get<std::vector<std::size_t>>();
    p.test = j.at("test").get<std::vector<std::size_t>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed split plan: ") + e.what());
  }
}

void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write split plan " + path.string());
  os << split_plan_to_json(plan) << '\n';
}

SplitPlan load_split_plan(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("split plan not found: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return split_plan_from_json(buf.str());
}

std::vector<ManifestRecord> select_records(std::span<const ManifestRecord> records,
                                           const SplitPlan* plan, std::string_view split) {
  if (split != "train" && split != "val" && split != "test" && split != "all") {
    throw Error("unknown split '" + std::string(split) + "' (expected train, val, test or all)");
  }
  if (split == "all") return {records.begin(), records.end()};
  std::vector<ManifestRecord> out;
  if (plan != nullptr) {
    const auto& index = split == "train" ? plan->train : split == "val" ? plan->val : plan->test;
    for (std::size_t i : index) {
      if (i >= records.size()) throw Error("split plan index " + std::to_string(i) + " outside the manifest");
      out.push_back(records[i]);
    }
    return out;
  }
  const bool any_hint = std::any_of(records.begin(), records.end(),
                                    [](const ManifestRecord& r) { return r.split_hint.has_value(); });
  if (!any_hint) {
    if (split == "train") out.assign(records.begin(), records.end());
    return out;
  }
  for (const auto& r : records) {
    if (r.split_hint && *r.split_hint == split) out.push_back(r);
  }
  return out;
}

}  // namespace uniemo
