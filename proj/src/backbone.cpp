#include "uniemo/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace uniemo {

namespace {

Tensor tiled(const Tensor& table, std::size_t times) {
  Tensor out({times * table.rows(), table.cols()});
  for (std::size_t n = 0; n < times; ++n) {
    std::copy(table.data().begin(), table.data().end(), out.ptr() + n * table.size());
  }
  return out;
}

Tensor small_normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, 0.02);
  return t;
}

}  // namespace

void BackboneConfig::validate() const {
  if (patch == 0 || image_size == 0 || image_size % patch != 0) {
    throw Error("image_size " + std::to_string(image_size) + " is not divisible by patch " +
                std::to_string(patch));
  }
  if (in_channels == 0) throw Error("in_channels must be positive");
  if (encoder_heads == 0 || encoder_width % encoder_heads != 0) {
    throw Error("encoder width must be divisible by encoder heads");
  }
  if (decoder_heads == 0 || decoder_width % decoder_heads != 0) {
    throw Error("decoder width must be divisible by decoder heads");
  }
  if (encoder_width % 2 != 0 || decoder_width % 2 != 0) {
    throw Error("sinusoidal positions need even encoder/decoder widths");
  }
  if (cls_proj_dim == 0 || mlp_ratio == 0) throw Error("cls_proj_dim and mlp_ratio must be positive");
  masked_count(num_patches(), mask_ratio);
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  Tensor src = images;
  if (src.rank() == 3) src.reshape({1, images.dim(0), images.dim(1), images.dim(2)});
  if (src.rank() != 4) throw Error("patchify expects N x H x W x C images");
  const std::size_t n = src.dim(0), h = src.dim(1), w = src.dim(2), c = src.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw Error("image " + std::to_string(h) + "x" + std::to_string(w) +
                " is not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = patch * patch * c;
  Tensor out({n, gh * gw, pd});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        double* dst = out.ptr() + (b * gh * gw + gy * gw + gx) * pd;
        for (std::size_t py = 0; py < patch; ++py) {
          const double* row = src.ptr() + ((b * h + gy * patch + py) * w + gx * patch) * c;
          std::copy_n(row, patch * c, dst + py * patch * c);
        }
      }
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t height,
                  std::size_t width, std::size_t channels) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw Error("unpatchify: image size not divisible by patch");
  }
  const std::size_t gh = height / patch, gw = width / patch, pd = patch * patch * channels;
  if (patches.size() % (gh * gw * pd) != 0) throw Error("unpatchify: patch tensor size mismatch");
  const std::size_t n = patches.size() / (gh * gw * pd);
  Tensor out({n, height, width, channels});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const double* srcp = patches.ptr() + (b * gh * gw + gy * gw + gx) * pd;
        for (std::size_t py = 0; py < patch; ++py) {
          double* row = out.ptr() + ((b * height + gy * patch + py) * width + gx * patch) * channels;
          std::copy_n(srcp + py * patch * channels, patch * channels, row);
        }
      }
    }
  }
  return out;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
  if (width == 0 || width % 2 != 0) {
    throw Error("sinusoidal positions need an even width, got " + std::to_string(width));
  }
  Tensor out({length, width});
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
      const double angle = static_cast<double>(p) * freq;
      out.at(p, 2 * i) = std::sin(angle);
      out.at(p, 2 * i + 1) = std::cos(angle);
    }
  }
  return out;
}

std::size_t masked_count(std::size_t num_patches, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("mask ratio must lie in (0, 1)");
  const auto m = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_patches) + 0.5));
  if (m < 1 || m + 1 > num_patches) {
    throw Error("mask ratio " + std::to_string(ratio) + " masks " + std::to_string(m) + " of " +
                std::to_string(num_patches) + " patches; need between 1 and " +
                std::to_string(num_patches == 0 ? 0 : num_patches - 1));
  }
  return m;
}

MaskPlan make_mask_plan(std::size_t num_patches, double ratio, std::uint64_t seed) {
  const std::size_t m = masked_count(num_patches, ratio);
  Rng rng(seed);
  const std::vector<std::size_t> perm = rng.permutation(num_patches);
  MaskPlan plan;
  plan.seed = seed;
  plan.masked_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
  plan.kept_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(m), perm.end());
  std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
  std::sort(plan.kept_idx.begin(), plan.kept_idx.end());
  return plan;
}

ad::Var apply_mask(ad::Var tokens, std::size_t num_patches, std::span<const MaskPlan> plans) {
  if (tokens.rows() != plans.size() * num_patches) {
    throw Error("apply_mask: token rows do not match batch x patches");
  }
  std::vector<std::size_t> index;
  for (std::size_t n = 0; n < plans.size(); ++n) {
    if (plans[n].kept_idx.size() != plans.front().kept_idx.size()) {
      throw Error("apply_mask: plans keep different token counts");
    }
    for (std::size_t k : plans[n].kept_idx) index.push_back(n * num_patches + k);
  }
  return ad::gather_rows(tokens, std::move(index));
}

MaskedTokens random_mask(ad::Var tokens, std::size_t batch, std::size_t num_patches, double ratio,
                         Rng& rng) {
  MaskedTokens out;
  for (std::size_t n = 0; n < batch; ++n) {
    out.plans.push_back(make_mask_plan(num_patches, ratio, rng.engine()()));
  }
  out.tokens = apply_mask(tokens, num_patches, out.plans);
  return out;
}

Encoder::Encoder(ParameterStore& store, const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t width = config_.encoder_width;
  patch_embed_ = Linear::create(store, "encoder.patch_embed", config_.patch_dim(), width, rng);
  cls_token_ = &store.add("encoder.cls_token", small_normal({1, width}, rng));
  for (std::size_t i = 0; i < config_.encoder_depth; ++i) {
    blocks_.push_back(TransformerBlock::create(store, "encoder.block" + std::to_string(i), width,
                                               config_.encoder_heads, config_.mlp_ratio, rng));
  }
  norm_ = LayerNorm::create(store, "encoder.norm", width);
  positions_ = sinusoidal_positions(config_.num_patches(), width);
}

ad::Var Encoder::embed_patches(ad::Tape& tape, const Tensor& patches) const {
  const std::size_t pd = config_.patch_dim();
  if (patches.cols() != pd) {
    throw Error("embed: patch width " + std::to_string(patches.cols()) + ", expected " +
                std::to_string(pd));
  }
  return patch_embed_(tape, tape.constant(patches.reshaped({patches.size() / pd, pd})));
}

ad::Var Encoder::add_positions(ad::Tape& tape, ad::Var tokens, std::size_t batch) const {
  return ad::add(tokens, tape.constant(tiled(positions_, batch)));
}

ad::Var Encoder::embed(ad::Tape& tape, const Tensor& patches) const {
  const std::size_t batch = patches.size() / (config_.patch_dim() * config_.num_patches());
  return add_positions(tape, embed_patches(tape, patches), batch);
}

EncodedState Encoder::encode(ad::Tape& tape, ad::Var tokens, std::size_t batch, std::size_t seq,
                             bool prepend_cls,
                             std::vector<TransformerBlock::Trace>* traces) const {
  if (tokens.cols() != config_.encoder_width || tokens.rows() != batch * seq) {
    throw Error("encode: tokens " + shape_str(tokens.value().shape()) + " for batch " +
                std::to_string(batch) + " x seq " + std::to_string(seq) + " x width " +
                std::to_string(config_.encoder_width));
  }
  ad::Var x = tokens;
  std::size_t len = seq;
  if (prepend_cls) {
    const ad::Var all = ad::concat_rows(tokens, tape.param(*cls_token_));
    std::vector<std::size_t> index;
    index.reserve(batch * (seq + 1));
    for (std::size_t n = 0; n < batch; ++n) {
      index.push_back(batch * seq);
      for (std::size_t j = 0; j < seq; ++j) index.push_back(n * seq + j);
    }
    x = ad::gather_rows(all, std::move(index));
    len = seq + 1;
  }
  if (traces != nullptr) traces->clear();
  for (const auto& block : blocks_) {
    TransformerBlock::Trace tr;
    x = block(tape, x, batch, len, traces ? &tr : nullptr);
    if (traces != nullptr) traces->push_back(tr);
  }
  EncodedState s;
  s.tokens = x;
  s.normed = norm_(tape, x);
  s.batch = batch;
  s.seq = len;
  s.has_cls = prepend_cls;
  return s;
}

ad::Var cls_rows(const EncodedState& state) {
  if (!state.has_cls) throw Error("encoded state has no CLS token");
  std::vector<std::size_t> index;
  for (std::size_t n = 0; n < state.batch; ++n) index.push_back(n * state.seq);
  return ad::gather_rows(state.normed, std::move(index));
}

ad::Var patch_rows(const EncodedState& state) {
  const std::size_t skip = state.has_cls ? 1 : 0;
  std::vector<std::size_t> index;
  for (std::size_t n = 0; n < state.batch; ++n) {
    for (std::size_t j = skip; j < state.seq; ++j) index.push_back(n * state.seq + j);
  }
  return ad::gather_rows(state.normed, std::move(index));
}

ClsProjection::ClsProjection(ParameterStore& store, const BackboneConfig& config, Rng& rng)
    : linear_(Linear::create(store, "projection.cls", config.encoder_width, config.cls_proj_dim, rng)) {}

ad::Var ClsProjection::operator()(ad::Tape& tape, const EncodedState& state) const {
  return linear_(tape, cls_rows(state));
}

Decoder::Decoder(ParameterStore& store, const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t width = config_.decoder_width;
  embed_ = Linear::create(store, "decoder.embed", config_.encoder_width, width, rng);
  mask_token_ = &store.add("decoder.mask_token", small_normal({1, width}, rng));
  for (std::size_t i = 0; i < config_.decoder_depth; ++i) {
    blocks_.push_back(TransformerBlock::create(store, "decoder.block" + std::to_string(i), width,
                                               config_.decoder_heads, config_.mlp_ratio, rng));
  }
  norm_ = LayerNorm::create(store, "decoder.norm", width);
  head_ = Linear::create(store, "decoder.head", width, config_.patch_dim(), rng);
  positions_ = sinusoidal_positions(config_.num_patches(), width);
}

ad::Var Decoder::decode(ad::Tape& tape, const EncodedState& state,
                        std::span<const MaskPlan> plans) const {
  const std::size_t batch = state.batch;
  const std::size_t np = config_.num_patches();
  const std::size_t kept = state.seq - (state.has_cls ? 1 : 0);
  if (plans.size() != batch) throw Error("decode: one mask plan per sample required");
  for (const auto& p : plans) {
    if (p.kept_idx.size() != kept || p.kept_idx.size() + p.masked_idx.size() != np) {
      throw Error("decode: mask plan does not match the encoded length " + std::to_string(kept));
    }
  }
  const ad::Var visible = embed_(tape, patch_rows(state));
  const ad::Var pool = ad::concat_rows(visible, tape.param(*mask_token_));
  std::vector<std::size_t> index(batch * np, batch * kept);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < kept; ++j) index[n * np + plans[n].kept_idx[j]] = n * kept + j;
  }
  ad::Var x = ad::add(ad::gather_rows(pool, std::move(index)), tape.constant(tiled(positions_, batch)));
  for (const auto& block : blocks_) x = block(tape, x, batch, np);
  return head_(tape, norm_(tape, x));
}

}  // namespace uniemo
