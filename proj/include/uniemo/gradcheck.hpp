#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "uniemo/autodiff.hpp"
#include "uniemo/params.hpp"

namespace uniemo {

struct GradCheckOptions {
  double step = 1e-5;         // central difference step
  double abs_floor = 1e-3;    // denominator floor of the relative error
  /// Upper bound on probed elements per parameter (evenly strided); 0 = all.
  std::size_t max_probes = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<parameter>[<index>]"
  std::size_t probes = 0;
};

/// Compares the tape gradient of `loss` with respect to every trainable
/// parameter in `store` against central differences. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckResult check_gradients(ParameterStore& store,
                                const std::function<ad::Var(ad::Tape&)>& loss,
                                const GradCheckOptions& options = {});

/// Instance sizes for the built-in components.
struct GradCheckSize {
  std::size_t batch = 4;   // N
  std::size_t dim = 8;     // C3
  std::size_t kappa = 3;
  std::uint64_t seed = 7;
};

/// Built-in components: gamma1..gamma4, l1, l2, l3, ce, encoder_block,
/// linear_toy.
std::vector<std::string> gradcheck_components();
GradCheckResult gradient_check(std::string_view component, const GradCheckSize& size = {});

}  // namespace uniemo
