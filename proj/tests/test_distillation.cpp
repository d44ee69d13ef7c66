#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "synthetic.hpp"
#include "uniemo/distillation.hpp"
#include "uniemo/gradcheck.hpp"

namespace uniemo {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c) * t.at(r, c);
  return std::sqrt(s);
}

Tensor negated(Tensor t) {
  for (double& v : t.data()) v = -v;
  return t;
}

TEST(RowNormalize, HandCasesAndUnitRows) {
  const Tensor out = row_normalize(Tensor({1, 2}, {3.0, 4.0}));
  EXPECT_NEAR(out[0], 0.6, 1e-15);
  EXPECT_NEAR(out[1], 0.8, 1e-15);
  EXPECT_LT(max_abs_diff(row_normalize(out), out), 1e-15);
  Rng rng(1);
  const Tensor r = row_normalize(random_tensor({5, 7}, rng));
  for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(row_norm(r, n), 1.0, 1e-9);
}

TEST(RowNormalize, ZeroRowIsAnErrorUnlessFloored) {
  Tensor x({3, 4}, 1.0);
  for (std::size_t c = 0; c < 4; ++c) x.at(1, c) = 0.0;
  try {
    row_normalize(x);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate feature row 1"), std::string::npos);
  }
  const Tensor floored = row_normalize(x, 1e-12);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(floored.at(1, c), 0.0);
}

TEST(Correlation, HandCase) {
  const Tensor u = Tensor({2, 2}, {1, 0, 0, 1});
  const Tensor v = Tensor({2, 2}, {0.6, 0.8, 0, 1});
  const Tensor m = correlation_matrix(u, v);
  // Raw U V^T = [[0.6, 0], [0.8, 1]].
  EXPECT_NEAR(m.at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(m.at(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(m.at(1, 0), 0.625, 5e-4);
  EXPECT_NEAR(m.at(1, 1), 0.781, 5e-4);
  EXPECT_NEAR(m.at(1, 0), 0.8 / std::sqrt(1.64), 1e-12);
}

TEST(Correlation, OrthonormalRowsGiveIdentityAndRowsAreUnit) {
  const Tensor eye = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_TRUE(correlation_matrix(eye, eye) == eye);
  Rng rng(2);
  const Tensor u = row_normalize(random_tensor({6, 5}, rng));
  const Tensor v = row_normalize(random_tensor({6, 5}, rng));
  const Tensor m = correlation_matrix(u, v);
  ASSERT_EQ(m.shape(), (Shape{6, 6}));
  for (std::size_t n = 0; n < 6; ++n) EXPECT_NEAR(row_norm(m, n), 1.0, 1e-9);
  // Before renormalization the self-correlation diagonal is all ones.
  for (std::size_t n = 0; n < 6; ++n) {
    double d = 0.0;
    for (std::size_t c = 0; c < 5; ++c) d += u.at(n, c) * u.at(n, c);
    EXPECT_NEAR(d, 1.0, 1e-12);
  }
  EXPECT_THROW(correlation_matrix(u, Tensor({6, 4}, 1.0)), Error);
}

TEST(SemanticLosses, ReferenceValues) {
  Rng rng(3);
  const Tensor a = row_normalize(random_tensor({4, 4}, rng));
  EXPECT_NEAR(similarity_contrastive_loss(a, a), 0.0, 1e-12);
  EXPECT_NEAR(similarity_contrastive_loss(a, negated(a)), 2.0, 1e-12);
  const Tensor e0 = Tensor({2, 2}, {1, 0, 0, 1});
  const Tensor e1 = Tensor({2, 2}, {0, 1, 1, 0});
  EXPECT_NEAR(similarity_contrastive_loss(e0, e1), 1.0, 1e-15);
  EXPECT_NEAR(feature_similarity_loss(a, a), 0.0, 1e-12);
  EXPECT_NEAR(feature_similarity_loss(a, negated(a)), 2.0, 1e-12);
  EXPECT_THROW(similarity_contrastive_loss(a, Tensor({3, 4})), Error);
}

TEST(SemanticLosses, FeatureLossMatchesCosineOracle) {
  Rng rng(4);
  const Tensor y = random_tensor({4, 6}, rng), o = random_tensor({4, 6}, rng);
  double acc = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double d = 0.0;
    for (std::size_t c = 0; c < 6; ++c) d += y.at(n, c) * o.at(n, c);
    acc += d / (row_norm(y, n) * row_norm(o, n));
  }
  EXPECT_NEAR(feature_similarity_loss(y, o), 1.0 - acc / 4.0, 1e-9);
  EXPECT_NEAR(feature_similarity_loss(row_normalize(y), row_normalize(o)), 1.0 - acc / 4.0, 1e-9);
}

TEST(SemanticLosses, StayInRangeAndAreScaleInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor fused = random_tensor({4, 8}, rng);
    const Tensor text = row_normalize(random_tensor({4, 8}, rng));
    const Tensor image = row_normalize(random_tensor({4, 8}, rng));
    const Tensor c = correlation_matrix(image, text);
    const auto losses = [&](const Tensor& f) {
      const Tensor fn = row_normalize(f);
      return std::pair{similarity_contrastive_loss(correlation_matrix(fn, text), c),
                       feature_similarity_loss(fn, image)};
    };
    const auto [l2, l3] = losses(fused);
    EXPECT_GE(l2, 0.0);
    EXPECT_LE(l2, 2.0);
    EXPECT_GE(l3, 0.0);
    EXPECT_LE(l3, 2.0);
    for (double scale : {0.1, 10.0}) {
      Tensor scaled = fused;
      for (double& v : scaled.data()) v *= scale;
      const auto [s2, s3] = losses(scaled);
      EXPECT_NEAR(s2, l2, 1e-12);
      EXPECT_NEAR(s3, l3, 1e-12);
    }
  }
}

TEST(SemanticLosses, DifferentiableFormsMatchPlainForms) {
  Rng rng(6);
  const Tensor a = row_normalize(random_tensor({5, 5}, rng));
  const Tensor c = row_normalize(random_tensor({5, 5}, rng));
  ad::Tape tape(false);
  EXPECT_NEAR(ad::similarity_contrastive_loss(tape.constant(a), tape.constant(c)).value()[0],
              similarity_contrastive_loss(a, c), 1e-14);
  EXPECT_NEAR(ad::feature_similarity_loss(tape.constant(a), tape.constant(c)).value()[0],
              feature_similarity_loss(a, c), 1e-14);
}

TEST(SemanticLosses, GradientsMatchFiniteDifferences) {
  for (const char* name : {"l2", "l3"}) {
    const GradCheckResult r = gradient_check(name, GradCheckSize{});
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " worst " << r.worst;
  }
}

TEST(StubTeacher, DeterministicUnitRowsAndSeedDependent) {
  const StubTeacher t1(11, 16), t1_again(11, 16), t2(12, 16);
  const std::vector<std::string> texts{"A photo evoking awe", "A photo evoking awe", "", "fear, in a forest"};
  const Tensor l = t1.encode_text(texts);
  ASSERT_EQ(l.shape(), (Shape{4, 16}));
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(l.at(0, c), l.at(1, c));
  for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(row_norm(l, n), 1.0, 1e-9);
  EXPECT_TRUE(t1_again.encode_text(texts) == l);
  EXPECT_GT(max_abs_diff(t2.encode_text(texts), l), 1e-3);

  const auto samples = testing::synthetic_samples(3, 16);
  std::vector<const ImageSample*> ptrs{&samples[0], &samples[1], &samples[2]};
  const Tensor o = t1.encode_image(ptrs);
  ASSERT_EQ(o.shape(), (Shape{3, 16}));
  for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(row_norm(o, n), 1.0, 1e-9);
  EXPECT_TRUE(t1_again.encode_image(ptrs) == o);
  EXPECT_GT(max_abs_diff(t2.encode_image(ptrs), o), 1e-3);
}

TEST(FeatureFileTeacher, LooksUpTextAndImageFeatures) {
  const auto path = std::filesystem::temp_directory_path() / "uniemo_test_teacher.jsonl";
  {
    std::ofstream os(path);
    os << "{\"text\": \"A photo evoking awe\", \"features\": [3, 4]}\n"
       << "{\"image_path\": \"img/a.png\", \"features\": [0, 2]}\n";
  }
  const FeatureFileTeacher t(path);
  EXPECT_EQ(t.dim(), 2u);
  const std::vector<std::string> texts{"A photo evoking awe"};
  const Tensor l = t.encode_text(texts);
  EXPECT_NEAR(l[0], 0.6, 1e-15);
  EXPECT_NEAR(l[1], 0.8, 1e-15);
  ImageSample s;
  s.source = "img/a.png";
  const ImageSample* ptr = &s;
  const Tensor o = t.encode_image(std::span<const ImageSample* const>(&ptr, 1));
  EXPECT_EQ(o[1], 1.0);
  const std::vector<std::string> unknown{"nothing"};
  EXPECT_THROW(t.encode_text(unknown), Error);
  EXPECT_THROW(FeatureFileTeacher("/nonexistent/features.jsonl"), Error);
}

}  // namespace
}  // namespace uniemo
