#pragma once

// Deterministic synthetic images and samples shared by the test suites.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "uniemo/data.hpp"
#include "uniemo/rng.hpp"

namespace uniemo::testing {

inline const std::array<std::string, 8> kEmotions = {"amusement", "awe",   "contentment", "excitement",
                                                     "anger",     "disgust", "fear",      "sadness"};

/// Smooth two-color gradient with a bright rectangle; the rectangle is the
/// person box.
inline ImageSample synthetic_sample(std::size_t index, std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, index));
  Tensor px({size, size, 3});
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1, 0.9);
    c1[c] = rng.uniform(0.1, 0.9);
  }
  const std::size_t bw = size / 4 + rng.below(size / 4);
  const std::size_t bh = size / 3 + rng.below(size / 3);
  const std::size_t x0 = rng.below(size - bw), y0 = rng.below(size - bh);
  double box_color[3];
  for (double& v : box_color) v = rng.uniform(0.0, 1.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = (static_cast<double>(x) + static_cast<double>(y)) / (2.0 * static_cast<double>(size));
      const bool inside = x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh;
      for (std::size_t c = 0; c < 3; ++c) {
        px[(y * size + x) * 3 + c] = inside ? box_color[c] : (1.0 - t) * c0[c] + t * c1[c];
      }
    }
  }
  ImageSample s;
  s.person_pixels = derive_person_map(px, PersonBox{x0, y0, x0 + bw, y0 + bh});
  s.pixels = std::move(px);
  const int label = static_cast<int>(index % kEmotions.size());
  s.label = label;
  s.caption = build_caption({{"emotion", kEmotions[static_cast<std::size_t>(label)]},
                             {"object", index % 2 ? "person" : "dog"},
                             {"scene", index % 3 ? "beach" : "street"}});
  s.source = "synthetic_" + std::to_string(index);
  return s;
}

inline std::vector<ImageSample> synthetic_samples(std::size_t count, std::size_t size,
                                                  std::uint64_t seed = 1) {
  std::vector<ImageSample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_sample(i, size, seed));
  return out;
}

/// Two linearly separable classes: class 0 is dark with a bright left half,
/// class 1 bright with a dark left half, plus noise.
inline std::vector<ImageSample> separable_samples(std::size_t count, std::size_t size,
                                                  std::uint64_t seed = 2) {
  Rng rng(seed);
  std::vector<ImageSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % 2);
    Tensor px({size, size, 3});
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const bool left = x < size / 2;
        const double base = (left == (label == 0)) ? 0.8 : 0.2;
        for (std::size_t c = 0; c < 3; ++c) {
          px[(y * size + x) * 3 + c] = std::clamp(base + rng.normal(0.0, 0.05), 0.0, 1.0);
        }
      }
    }
    ImageSample s;
    s.person_pixels = px;
    s.pixels = std::move(px);
    s.label = label;
    s.caption = build_caption({{"emotion", kEmotions[static_cast<std::size_t>(label)]}});
    s.source = "separable_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uniemo::testing
