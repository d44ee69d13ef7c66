#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "uniemo/autodiff.hpp"
#include "uniemo/layers.hpp"
#include "uniemo/params.hpp"
#include "uniemo/rng.hpp"

namespace uniemo {

/// How the scene embedding (alpha) and person embedding (beta) are combined.
enum class FusionStrategy {
  kGamma1,  // weighted sums per head, LayerNorm
  kGamma2,  // head-competing attention scores, Swish
  kGamma3,  // per-head feature softmax, MLP and sigmoid gating
  kGamma4,  // plain addition
};

FusionStrategy parse_fusion_strategy(std::string_view name);
std::string_view fusion_strategy_name(FusionStrategy s) noexcept;

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::kGamma1;
  std::size_t dim = 64;    // C3
  std::size_t kappa = 4;   // heads
  double epsilon = 1e-6;   // fixed, non-learnable bias added to the output
};

/// Fusion head; parameters live under "fusion.".
///
/// Shapes: alpha, beta and the result are [N x dim].
///   gamma1: LN(sum_i lambda_i*alpha + mu_i*beta) + eps
///   gamma2: w = softmax over heads of (alpha.eta_i), likewise for beta;
///           Swish(sum_i w_i^a alpha + w_i^b beta) + eps
///   gamma3: D_i = softmax(alpha phi_i)*alpha + softmax(beta phi'_i)*beta,
///           Dm = ReLU(concat(D) W1 + b1) W2 + b2, Dg = Dm * sigm(Dm W3 + b3),
///           ReLU(Dm * sigm(Dg)) + eps
///   gamma4: alpha + beta
class Fusion {
 public:
  Fusion(ParameterStore& store, const FusionConfig& config, Rng& rng);

  ad::Var operator()(ad::Tape& tape, ad::Var alpha, ad::Var beta) const;
  /// Convenience forward on plain tensors.
  Tensor apply(const Tensor& alpha, const Tensor& beta) const;

  /// Gamma2 per-head weights ([N x kappa] each) for inspection.
  std::pair<Tensor, Tensor> head_weights(const Tensor& alpha, const Tensor& beta) const;

  const FusionConfig& config() const { return config_; }

  // Parameter handles, exposed for tests and reference implementations.
  std::vector<Parameter*> lambda, mu;       // gamma1, each [dim]
  LayerNorm norm;                           // gamma1
  std::vector<Parameter*> eta, xi;          // gamma2, each [dim x 1]
  std::vector<Parameter*> phi, phi_prime;   // gamma3, each [dim x dim]
  Linear w1, w2, w3;                        // gamma3

 private:
  ad::Var gamma1(ad::Tape& tape, ad::Var a, ad::Var b) const;
  ad::Var gamma2(ad::Tape& tape, ad::Var a, ad::Var b) const;
  ad::Var gamma3(ad::Tape& tape, ad::Var a, ad::Var b) const;
  ad::Var add_epsilon(ad::Tape& tape, ad::Var x) const;

  FusionConfig config_;
};

}  // namespace uniemo
