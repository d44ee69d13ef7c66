#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <numeric>

#include "synthetic.hpp"
#include "uniemo/data.hpp"
#include "uniemo/image.hpp"

namespace uniemo {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("uniemo_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Manifest, EmptyTextGivesNoRecords) {
  EXPECT_TRUE(parse_manifest("").empty());
  EXPECT_TRUE(parse_manifest("\n  \n").empty());
}

TEST(Manifest, RecordsKeepFileOrderAndFields) {
  const auto records = parse_manifest(
      "{\"image_path\": \"a.png\", \"label\": 2, \"attributes\": {\"emotion\": \"awe\", \"scene\": \"sea\"}}\n"
      "{\"image_path\": \"b.png\", \"person_box\": [1, 2, 5, 6], \"split_hint\": \"val\"}\n"
      "{\"image_path\": \"c.png\"}\n");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].image_path, "a.png");
  EXPECT_EQ(records[1].image_path, "b.png");
  EXPECT_EQ(records[2].image_path, "c.png");
  EXPECT_EQ(records[0].label, 2);
  ASSERT_EQ(records[0].attributes.size(), 2u);
  EXPECT_EQ(records[0].attributes[0].first, "emotion");
  EXPECT_EQ(records[0].attributes[1].first, "scene");
  EXPECT_EQ(records[1].person_box, (PersonBox{1, 2, 5, 6}));
  EXPECT_EQ(records[1].split_hint, "val");
  EXPECT_FALSE(records[2].label.has_value());
  EXPECT_EQ(records[2].line, 3u);
}

TEST(Manifest, InvalidBoxNamesTheLine) {
  const std::string text =
      "{\"image_path\": \"a.png\"}\n"
      "{\"image_path\": \"b.png\"}\n"
      "{\"image_path\": \"c.png\", \"person_box\": [5, 0, 5, 4]}\n";
  EXPECT_NE(error_of([&] { parse_manifest(text); }).find("invalid box at line 3"), std::string::npos);
  EXPECT_NE(error_of([] { parse_manifest("{\"image_path\": \"a\", \"person_box\": [0, 4, 3, 2]}"); })
                .find("invalid box at line 1"),
            std::string::npos);
}

TEST(Manifest, MissingFieldsAndFilesAreReported) {
  EXPECT_NE(error_of([] { parse_manifest("{\"label\": 1}", "m.jsonl"); }).find("m.jsonl:1: missing field image_path"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_manifest("not json"); }).find("malformed record"), std::string::npos);
  EXPECT_NE(error_of([] { load_manifest("/nonexistent/manifest.jsonl"); }).find("manifest not found"),
            std::string::npos);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  const fs::path dir = scratch_dir("manifest");
  ManifestRecord r;
  r.image_path = "x.png";
  r.label = 4;
  r.attributes = {{"emotion", "fear"}, {"object", "spider"}};
  r.person_box = PersonBox{0, 1, 2, 3};
  r.split_hint = "test";
  r.caption = "A photo evoking fear, featuring spider";
  const std::vector<ManifestRecord> in{r};
  write_manifest(dir / "m.jsonl", in);
  const auto out = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].image_path, r.image_path);
  EXPECT_EQ(out[0].label, r.label);
  EXPECT_EQ(out[0].attributes, r.attributes);
  EXPECT_EQ(out[0].person_box, r.person_box);
  EXPECT_EQ(out[0].split_hint, r.split_hint);
  EXPECT_EQ(out[0].caption, r.caption);
}

TEST(Caption, TemplateExamples) {
  EXPECT_EQ(build_caption({{"emotion", "awe"}}), "A photo evoking awe");
  EXPECT_EQ(build_caption({{"emotion", "fear"}, {"object", "spider"}, {"scene", "forest"}}),
            "A photo evoking fear, featuring spider, in a forest scene");
  EXPECT_EQ(build_caption({{"emotion", "amusement"}, {"object", "clown"}}),
            "A photo evoking amusement, featuring clown");
}

TEST(Caption, ExtraAttributesFollowInManifestOrder) {
  EXPECT_EQ(build_caption({{"weather", "rain"}, {"scene", "city"}, {"emotion", "sadness"}, {"time", "night"}}),
            "A photo evoking sadness, in a city scene, with weather rain, with time night");
  const Attributes attrs{{"emotion", "awe"}, {"object", "mountain"}};
  EXPECT_EQ(build_caption(attrs), build_caption(attrs));
}

TEST(Caption, MissingEmotionThrows) {
  EXPECT_THROW(build_caption({{"object", "dog"}}), Error);
  EXPECT_THROW(build_caption({}), Error);
}

TEST(PersonMap, FullBoxAndAbsentBoxAreIdentity) {
  const ImageSample s = testing::synthetic_sample(3, 16, 5);
  const Tensor full = derive_person_map(s.pixels, PersonBox{0, 0, 16, 16});
  EXPECT_TRUE(full == s.pixels);
  const Tensor none = derive_person_map(s.pixels, std::nullopt);
  EXPECT_TRUE(none == s.pixels);
}

TEST(PersonMap, ConstantCropStaysConstant) {
  const Tensor img({4, 4, 3}, 0.37);
  const Tensor out = derive_person_map(img, PersonBox{0, 0, 2, 2});
  ASSERT_EQ(out.shape(), img.shape());
  for (double v : out.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(PersonMap, CropSelectsTheBoxRegion) {
  Tensor img({4, 4, 1});
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) img[y * 4 + x] = (x >= 2 && y >= 2) ? 1.0 : 0.0;
  }
  const Tensor out = derive_person_map(img, PersonBox{2, 2, 4, 4});
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(PersonMap, OutOfRangeBoxThrows) {
  const Tensor img({4, 4, 3}, 0.5);
  EXPECT_THROW(derive_person_map(img, PersonBox{0, 0, 5, 4}), Error);
  EXPECT_THROW(derive_person_map(img, PersonBox{2, 0, 2, 4}), Error);
}

TEST(Histogram, HandCountedExamples) {
  const auto zero = color_histogram(Tensor({5, 5, 3}, 0.0), 4);
  ASSERT_EQ(zero.size(), 12u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(std::vector<double>(zero.begin() + 4 * c, zero.begin() + 4 * c + 4),
              (std::vector<double>{1, 0, 0, 0}));
  }
  Tensor half({2, 4, 3});
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t c = 0; c < 3; ++c) half[i * 3 + c] = i % 2 ? 0.9 : 0.1;
  }
  EXPECT_EQ(color_histogram(half, 2), (std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5, 0.5}));
  EXPECT_EQ(color_histogram(half, 1), (std::vector<double>{1, 1, 1}));
  EXPECT_THROW(color_histogram(half, 0), Error);
}

TEST(Histogram, ChannelsSumToOneAndAreNonNegative) {
  for (std::size_t i = 0; i < 10; ++i) {
    const auto h = color_histogram(testing::synthetic_sample(i, 24, 9).pixels, 16);
    ASSERT_EQ(h.size(), 48u);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(std::accumulate(h.begin() + 16 * c, h.begin() + 16 * (c + 1), 0.0), 1.0, 1e-12);
    }
    for (double v : h) EXPECT_GE(v, 0.0);
  }
}

TEST(ImageIo, EightBitFilesRoundTrip) {
  const fs::path dir = scratch_dir("io");
  const Tensor img = quantize_8bit(testing::synthetic_sample(1, 12, 3).pixels);
  for (const char* name : {"a.png", "a.ppm"}) {
    write_image(dir / name, img);
    const Tensor back = read_image(dir / name, 3);
    ASSERT_EQ(back.shape(), img.shape()) << name;
    EXPECT_LT(max_abs_diff(back, img), 1e-12) << name;
  }
  Tensor gray({3, 5, 1});
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<double>(i * 17) / 255.0;
  write_image(dir / "g.pgm", gray);
  const Tensor rgb = read_image(dir / "g.pgm", 3);
  ASSERT_EQ(rgb.shape(), (Shape{3, 5, 3}));
  for (std::size_t i = 0; i < gray.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(rgb[i * 3 + c], gray[i], 1e-12);
  }
  EXPECT_THROW(read_image(dir / "missing.png"), Error);
}

TEST(ImageIo, ResizeToSameSizeIsExactAndConstantsStayConstant) {
  const Tensor img = testing::synthetic_sample(2, 10, 3).pixels;
  EXPECT_TRUE(resize_bilinear(img, 10, 10) == img);
  const Tensor up = resize_bilinear(Tensor({3, 7, 2}, 0.25), 11, 5);
  ASSERT_EQ(up.shape(), (Shape{11, 5, 2}));
  for (double v : up.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(LoadSample, ResizesBothStreamsAndBuildsCaption) {
  const fs::path dir = scratch_dir("load");
  write_image(dir / "img.png", quantize_8bit(testing::synthetic_sample(0, 20, 4).pixels));
  ManifestRecord r;
  r.image_path = "img.png";
  r.label = 1;
  r.attributes = {{"emotion", "awe"}, {"scene", "beach"}};
  r.person_box = PersonBox{2, 3, 12, 15};
  const ImageSample s = load_sample(r, dir, 8, 3);
  EXPECT_EQ(s.pixels.shape(), (Shape{8, 8, 3}));
  EXPECT_EQ(s.person_pixels.shape(), (Shape{8, 8, 3}));
  EXPECT_EQ(s.caption, "A photo evoking awe, in a beach scene");
  EXPECT_EQ(s.label, 1);
  for (double v : s.pixels.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);

  r.person_box = PersonBox{0, 0, 21, 20};
  r.line = 7;
  EXPECT_NE(error_of([&] { load_sample(r, dir, 8, 3); }).find("manifest line 7"), std::string::npos);
}

TEST(Mixup, ForcedLambdaCases) {
  Rng rng(11);
  Tensor x({4, 2, 2, 3});
  for (double& v : x.data()) v = rng.uniform();
  const std::vector<int> y{0, 1, 2, 3};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const std::size_t per_sample = 12;

  const MixupBatch one = mixup_with(x, y, 1.0, perm);
  EXPECT_TRUE(one.x == x);
  EXPECT_EQ(one.y_a, y);
  EXPECT_EQ(one.y_b, (std::vector<int>{2, 0, 3, 1}));

  const MixupBatch zero = mixup_with(x, y, 0.0, perm);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < per_sample; ++k) {
      EXPECT_EQ(zero.x[i * per_sample + k], x[perm[i] * per_sample + k]);
    }
  }

  const MixupBatch half = mixup_with(x, y, 0.5, perm);
  EXPECT_EQ(half.x.shape(), x.shape());
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < per_sample; ++k) {
      EXPECT_NEAR(half.x[i * per_sample + k], 0.5 * (x[i * per_sample + k] + x[perm[i] * per_sample + k]),
                  1e-15);
    }
  }
}

TEST(Mixup, SampledBatchIsConsistentAndValidatesInput) {
  Rng data_rng(1);
  Tensor x({6, 5});
  for (double& v : x.data()) v = data_rng.uniform();
  const std::vector<int> y{0, 1, 0, 1, 2, 2};
  Rng rng(3);
  const MixupBatch m = mixup_batch(x, y, 0.8, rng);
  EXPECT_GE(m.lambda, 0.0);
  EXPECT_LE(m.lambda, 1.0);
  EXPECT_EQ(m.x.shape(), x.shape());
  std::vector<std::size_t> sorted = m.permutation;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  const MixupBatch again = mixup_with(x, y, m.lambda, m.permutation);
  EXPECT_TRUE(again.x == m.x);

  const Tensor single({1, 5});
  const std::vector<int> one_label{0};
  EXPECT_THROW(mixup_batch(single, one_label, 0.8, rng), Error);
  EXPECT_THROW(mixup_with(single, one_label, 1.0, {0}), Error);
  EXPECT_THROW(mixup_batch(x, y, 0.0, rng), Error);
  EXPECT_THROW(mixup_with(x, y, 1.5, m.permutation), Error);
}

}  // namespace
}  // namespace uniemo
