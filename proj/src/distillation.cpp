#include "uniemo/distillation.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "uniemo/kernels.hpp"
#include "uniemo/rng.hpp"

namespace uniemo {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw Error(std::string(what) + ": expected matching N x C matrices, got " +
                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Tensor row_normalize(const Tensor& x, double floor) {
  ad::Tape tape(false);
  return ad::row_normalize(tape.constant(x), floor).value();
}

Tensor correlation_matrix(const Tensor& u, const Tensor& v) {
  ad::Tape tape(false);
  return ad::correlation_matrix(tape.constant(u), tape.constant(v)).value();
}

double similarity_contrastive_loss(const Tensor& a, const Tensor& c) {
  require_same_shape(a, c, "similarity_contrastive_loss");
  double acc = 0.0;
  for (std::size_t n = 0; n < a.rows(); ++n) acc += kernels::dot(a.row(n), c.row(n));
  return 1.0 - acc / static_cast<double>(a.rows());
}

double feature_similarity_loss(const Tensor& y, const Tensor& o) {
  require_same_shape(y, o, "feature_similarity_loss");
  double acc = 0.0;
  for (std::size_t n = 0; n < y.rows(); ++n) {
    const double ny = std::sqrt(kernels::dot(y.row(n), y.row(n)));
    const double no = std::sqrt(kernels::dot(o.row(n), o.row(n)));
    if (ny < 1e-12 || no < 1e-12) throw Error("degenerate feature row " + std::to_string(n));
    acc += kernels::dot(y.row(n), o.row(n)) / (ny * no);
  }
  return 1.0 - acc / static_cast<double>(y.rows());
}

namespace ad {

Var correlation_matrix(Var u, Var v, double floor) {
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  if (uv.cols() != vv.cols()) {
    throw Error("correlation_matrix: feature widths " + std::to_string(uv.cols()) + " and " +
                std::to_string(vv.cols()));
  }
  return row_normalize(matmul_nt(u, v), floor);
}

Var similarity_contrastive_loss(Var a, Var c) {
  require_same_shape(a.value(), c.value(), "similarity_contrastive_loss");
  return add_scalar(scale(mean(row_dot(a, c)), -1.0), 1.0);
}

Var feature_similarity_loss(Var y, Var o) {
  require_same_shape(y.value(), o.value(), "feature_similarity_loss");
  return add_scalar(scale(mean(row_dot(y, o)), -1.0), 1.0);
}

}  // namespace ad

StubTeacher::StubTeacher(std::uint64_t seed, std::size_t dim, std::size_t channels)
    : dim_(dim), channels_(channels) {
  if (dim == 0) throw Error("teacher dimension must be positive");
  if (channels == 0) throw Error("teacher channel count must be positive");
  Rng text_rng(derive_seed(seed, 1));
  text_proj_ = Tensor({kTextBuckets, dim});
  for (double& v : text_proj_.data()) v = text_rng.normal();
  Rng image_rng(derive_seed(seed, 2));
  image_proj_ = Tensor({kGrid * kGrid * channels, dim});
  for (double& v : image_proj_.data()) v = image_rng.normal();
  image_bias_ = Tensor({dim});
  for (double& v : image_bias_.data()) v = image_rng.normal();
}

Tensor StubTeacher::encode_text(std::span<const std::string> texts) const {
  Tensor bags({texts.size(), kTextBuckets});
  for (std::size_t n = 0; n < texts.size(); ++n) {
    std::string token;
    auto flush = [&] {
      if (token.empty()) return;
      const std::uint64_t h = fnv1a(token);
      bags.at(n, h % kTextBuckets) += (h >> 63) ? -1.0 : 1.0;
      token.clear();
    };
    for (unsigned char c : texts[n]) {
      if (std::isalnum(c)) {
        token.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
    }
    flush();
    // A fixed offset bucket keeps empty captions off the origin.
    bags.at(n, 0) += 1.0;
  }
  Tensor out({texts.size(), dim_});
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, texts.size(), dim_, kTextBuckets,
                bags.ptr(), text_proj_.ptr(), out.ptr(), false);
  return row_normalize(out);
}

Tensor StubTeacher::encode_image(std::span<const ImageSample* const> samples) const {
  const std::size_t fdim = kGrid * kGrid * channels_;
  Tensor pooled({samples.size(), fdim});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Tensor& img = samples[n]->pixels;
    if (img.rank() != 3 || img.dim(2) != channels_) {
      throw Error("stub teacher expects H x W x " + std::to_string(channels_) + " images");
    }
    const std::size_t h = img.dim(0), w = img.dim(1);
    std::vector<double> counts(kGrid * kGrid, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t gy = y * kGrid / h;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t gx = x * kGrid / w;
        counts[gy * kGrid + gx] += 1.0;
        for (std::size_t c = 0; c < channels_; ++c) {
          pooled.at(n, (c * kGrid + gy) * kGrid + gx) += img[(y * w + x) * channels_ + c];
        }
      }
    }
    for (std::size_t c = 0; c < channels_; ++c) {
      for (std::size_t g = 0; g < kGrid * kGrid; ++g) {
        double& v = pooled.at(n, c * kGrid * kGrid + g);
        v = counts[g] > 0.0 ? v / counts[g] - 0.5 : 0.0;
      }
    }
  }
  Tensor out({samples.size(), dim_});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    std::copy(image_bias_.data().begin(), image_bias_.data().end(), out.row(n).begin());
  }
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, samples.size(), dim_, fdim,
                pooled.ptr(), image_proj_.ptr(), out.ptr(), true);
  return row_normalize(out);
}

FeatureFileTeacher::FeatureFileTeacher(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("teacher feature file not found: " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto f = j.at("features").get<std::vector<double>>();
      if (f.empty()) throw Error("empty feature vector");
      if (dim_ == 0) dim_ = f.size();
      if (f.size() != dim_) throw Error("feature length " + std::to_string(f.size()) + " != " + std::to_string(dim_));
      if (j.contains("text")) {
        text_[j["text"].get<std::string>()] = std::move(f);
      } else if (j.contains("image_path")) {
        image_[j["image_path"].get<std::string>()] = std::move(f);
      } else {
        throw Error("record needs \"text\" or \"image_path\"");
      }
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (dim_ == 0) throw Error("teacher feature file " + path.string() + " is empty");
}

Tensor FeatureFileTeacher::encode_text(std::span<const std::string> texts) const {
  Tensor out({texts.size(), dim_});
  for (std::size_t n = 0; n < texts.size(); ++n) {
    const auto it = text_.find(texts[n]);
    if (it == text_.end()) throw Error("teacher has no text features for \"" + texts[n] + "\"");
    std::copy(it->second.begin(), it->second.end(), out.row(n).begin());
  }
  return row_normalize(out);
}

Tensor FeatureFileTeacher::encode_image(std::span<const ImageSample* const> samples) const {
  Tensor out({samples.size(), dim_});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto it = image_.find(samples[n]->source);
    if (it == image_.end()) throw Error("teacher has no image features for " + samples[n]->source);
    std::copy(it->second.begin(), it->second.end(), out.row(n).begin());
  }
  return row_normalize(out);
}

std::unique_ptr<Teacher> stub_teacher(std::uint64_t seed, std::size_t dim, std::size_t channels) {
  return std::make_unique<StubTeacher>(seed, dim, channels);
}

}  // namespace uniemo
