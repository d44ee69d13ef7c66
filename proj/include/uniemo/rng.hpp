#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace uniemo {

/// Mixes a base seed with a stream id (splitmix64 finalizer) so that
/// independent consumers (init, masking, batching) get decorrelated streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

/// Seeded random source. Distributions are constructed per draw so the
/// whole state lives in the engine and serializes with state()/restore().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();                         // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Beta(a, b) via the ratio of two Gamma draws.
  double beta(double a, double b);
  std::size_t below(std::size_t n);         // uniform in [0, n)
  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

  std::string state() const;
  void restore(const std::string& state);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace uniemo
