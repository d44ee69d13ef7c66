#pragma once

#include <cstdint>
#include <vector>

#include "uniemo/config.hpp"
#include "uniemo/params.hpp"

namespace uniemo {

/// Learning rate at optimizer step `step` (0-based): linear warmup
/// base*(step+1)/(warmup+1) for step < warmup, then cosine decay from base
/// to 0 at total_steps (or constant base when cosine is off).
double learning_rate(const OptimConfig& config, std::int64_t step);

/// Adam with decoupled weight decay. Decay applies to weight matrices only
/// (rank >= 2, excluding learned tokens); biases, norms and vectors are
/// not decayed.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, const OptimConfig& config);

  /// One update with learning rate `lr` from the gradients currently held
  /// by the parameters. Parameters with an empty gradient are skipped.
  void step(double lr);

  std::int64_t steps_taken() const noexcept { return t_; }
  void set_steps_taken(std::int64_t t) noexcept { t_ = t; }

  const std::vector<Parameter*>& params() const noexcept { return params_; }
  std::vector<Tensor>& first_moments() noexcept { return m_; }
  std::vector<Tensor>& second_moments() noexcept { return v_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  static bool decays(const Parameter& p);

 private:
  std::vector<Parameter*> params_;
  OptimConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

}  // namespace uniemo
