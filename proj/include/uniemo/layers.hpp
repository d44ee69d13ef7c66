#pragma once

#include <string>

#include "uniemo/autodiff.hpp"
#include "uniemo/params.hpp"
#include "uniemo/rng.hpp"

namespace uniemo {

/// Affine map x * W + b with W stored [in x out].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  /// Xavier-uniform weight, zero bias.
  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  ad::Var operator()(ad::Tape& tape, ad::Var x) const;
  std::size_t in_features() const { return weight->value.dim(0); }
  std::size_t out_features() const { return weight->value.dim(1); }
};

/// Per-row layer normalization with identity-initialized affine.
struct LayerNorm {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  double eps = 1e-6;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width);
  ad::Var operator()(ad::Tape& tape, ad::Var x) const;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  LayerNorm norm1;
  Linear qkv;
  Linear proj;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;
  std::size_t heads = 1;

  struct Trace {
    ad::Var norm1_out;
    ad::Var output;
  };

  static TransformerBlock create(ParameterStore& store, const std::string& name, std::size_t width,
                                 std::size_t heads, std::size_t mlp_ratio, Rng& rng);
  /// x is [batch*seq x width], sequences stored contiguously.
  ad::Var operator()(ad::Tape& tape, ad::Var x, std::size_t batch, std::size_t seq,
                     Trace* trace = nullptr) const;
};

}  // namespace uniemo
