#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uniemo/autodiff.hpp"
#include "uniemo/layers.hpp"
#include "uniemo/params.hpp"
#include "uniemo/rng.hpp"

namespace uniemo {

struct BackboneConfig {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  std::size_t in_channels = 3;
  std::size_t encoder_width = 128;
  std::size_t encoder_depth = 4;
  std::size_t encoder_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t decoder_width = 64;
  std::size_t decoder_depth = 2;
  std::size_t decoder_heads = 4;
  std::size_t cls_proj_dim = 64;
  double mask_ratio = 0.75;
  /// Reconstruct per-patch standardized pixels instead of raw [0,1] values.
  bool norm_pix_loss = false;

  std::size_t grid() const { return image_size / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch * patch * in_channels; }
  void validate() const;
};

/// N x H x W x C (or a single H x W x C) -> N x (H/p * W/p) x (p*p*C),
/// patches in row-major grid order, pixels inside a patch row-major then channel.
Tensor patchify(const Tensor& images, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t height,
                  std::size_t width, std::size_t channels);

/// Fixed sine/cosine table: row p, columns 2i and 2i+1 hold
/// sin(p / 10000^(2i/width)) and cos(p / 10000^(2i/width)).
Tensor sinusoidal_positions(std::size_t length, std::size_t width);

/// Masked/kept partition of patch indices for one sample. Both lists are
/// ascending.
struct MaskPlan {
  std::vector<std::size_t> kept_idx;
  std::vector<std::size_t> masked_idx;
  std::uint64_t seed = 0;
};

/// round_half_up(ratio * num_patches); throws unless it is in [1, num_patches - 1].
std::size_t masked_count(std::size_t num_patches, double ratio);

/// Masks the first round(ratio * n) entries of a uniform permutation drawn from Rng(seed).
MaskPlan make_mask_plan(std::size_t num_patches, double ratio, std::uint64_t seed);

struct MaskedTokens {
  ad::Var tokens;  // [batch * kept x width], original relative order
  std::vector<MaskPlan> plans;
};

/// Draws one plan per sample (seeds taken from `rng`) and gathers kept rows.
MaskedTokens random_mask(ad::Var tokens, std::size_t batch, std::size_t num_patches, double ratio,
                         Rng& rng);
/// Gathers kept rows for given plans.
ad::Var apply_mask(ad::Var tokens, std::size_t num_patches, std::span<const MaskPlan> plans);

/// Encoder output. `tokens` is the residual stream after the last block,
/// `normed` the same after the final LayerNorm.
struct EncodedState {
  ad::Var tokens;
  ad::Var normed;
  std::size_t batch = 0;
  std::size_t seq = 0;  // rows per sample, CLS included
  bool has_cls = false;
};

/// Patch embedding, CLS token, transformer blocks and final norm.
/// Parameters live under "encoder.".
class Encoder {
 public:
  Encoder(ParameterStore& store, const BackboneConfig& config, Rng& rng);

  /// Linear patch projection plus positional encoding: [N*L x width].
  ad::Var embed(ad::Tape& tape, const Tensor& patches) const;
  /// Linear patch projection only.
  ad::Var embed_patches(ad::Tape& tape, const Tensor& patches) const;
  ad::Var add_positions(ad::Tape& tape, ad::Var tokens, std::size_t batch) const;

  EncodedState encode(ad::Tape& tape, ad::Var tokens, std::size_t batch, std::size_t seq,
                      bool prepend_cls,
                      std::vector<TransformerBlock::Trace>* traces = nullptr) const;

  const BackboneConfig& config() const { return config_; }
  std::size_t depth() const { return blocks_.size(); }

 private:
  BackboneConfig config_;
  Linear patch_embed_;
  Parameter* cls_token_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  LayerNorm norm_;
  Tensor positions_;
};

/// Rows holding the CLS token of each sample ([batch x width]).
ad::Var cls_rows(const EncodedState& state);
/// Patch rows of each sample, CLS dropped ([batch*patches x width]).
ad::Var patch_rows(const EncodedState& state);

/// Linear map of the normalized CLS row to the cls_proj_dim embedding
/// (alpha / beta). Parameters under "projection.".
class ClsProjection {
 public:
  ClsProjection(ParameterStore& store, const BackboneConfig& config, Rng& rng);
  ad::Var operator()(ad::Tape& tape, const EncodedState& state) const;

 private:
  Linear linear_;
};

/// Reconstruction decoder; parameters under "decoder.".
class Decoder {
 public:
  Decoder(ParameterStore& store, const BackboneConfig& config, Rng& rng);

  /// Kept tokens of `state` (CLS dropped) are embedded, the shared mask token
  /// fills masked slots, positions are added over the full grid and the head
  /// maps back to pixels: [batch*patches x patch_dim] in patch order.
  ad::Var decode(ad::Tape& tape, const EncodedState& state, std::span<const MaskPlan> plans) const;

 private:
  BackboneConfig config_;
  Linear embed_;
  Parameter* mask_token_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  LayerNorm norm_;
  Linear head_;
  Tensor positions_;
};

}  // namespace uniemo
