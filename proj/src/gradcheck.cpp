#include "uniemo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "uniemo/backbone.hpp"
#include "uniemo/distillation.hpp"
#include "uniemo/fusion.hpp"
#include "uniemo/objectives.hpp"
#include "uniemo/rng.hpp"

namespace uniemo {

namespace {

double evaluate(const std::function<ad::Var(ad::Tape&)>& loss) {
  ad::Tape tape(false);
  const ad::Var v = loss(tape);
  if (v.value().size() != 1) throw Error("gradient check loss must be a scalar");
  return v.value()[0];
}

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// Weighted sum with fixed random weights: a generic scalar readout whose
// gradient reaches every output element.
ad::Var readout(ad::Tape& tape, ad::Var x, const Tensor& weights) {
  return ad::sum(ad::mul(x, tape.constant(weights)));
}

GradCheckResult check_fusion(FusionStrategy strategy, const GradCheckSize& size) {
  Rng rng(size.seed);
  ParameterStore store;
  FusionConfig fc;
  fc.strategy = strategy;
  fc.dim = size.dim;
  fc.kappa = size.kappa;
  const Fusion fusion(store, fc, rng);
  Parameter& alpha = store.add("input.alpha", random_tensor({size.batch, size.dim}, rng));
  Parameter& beta = store.add("input.beta", random_tensor({size.batch, size.dim}, rng));
  const Tensor w = random_tensor({size.batch, size.dim}, rng);
  return check_gradients(store, [&](ad::Tape& t) {
    return readout(t, fusion(t, t.param(alpha), t.param(beta)), w);
  });
}

GradCheckResult check_l1(const GradCheckSize& size) {
  Rng rng(size.seed);
  const std::size_t patches = 4, width = 6;
  ParameterStore store;
  Parameter& pred = store.add("input.pred", random_tensor({size.batch * patches, width}, rng));
  const Tensor target = random_tensor({size.batch * patches, width}, rng);
  std::vector<MaskPlan> plans;
  for (std::size_t n = 0; n < size.batch; ++n) plans.push_back(make_mask_plan(patches, 0.5, size.seed + n));
  return check_gradients(store, [&](ad::Tape& t) {
    return ad::masked_reconstruction_loss(t.param(pred), target, plans);
  });
}

GradCheckResult check_distill(bool contrastive, const GradCheckSize& size) {
  Rng rng(size.seed);
  ParameterStore store;
  Parameter& fused = store.add("input.fused", random_tensor({size.batch, size.dim}, rng));
  const Tensor text = row_normalize(random_tensor({size.batch, size.dim}, rng));
  const Tensor image = row_normalize(random_tensor({size.batch, size.dim}, rng));
  return check_gradients(store, [&](ad::Tape& t) {
    const ad::Var fused_n = ad::row_normalize(t.param(fused));
    const ad::Var image_n = t.constant(image);
    if (!contrastive) return ad::feature_similarity_loss(fused_n, image_n);
    const ad::Var text_n = t.constant(text);
    return ad::similarity_contrastive_loss(ad::correlation_matrix(fused_n, text_n),
                                           ad::correlation_matrix(image_n, text_n));
  });
}

GradCheckResult check_ce(const GradCheckSize& size) {
  Rng rng(size.seed);
  const std::size_t classes = 5;
  ParameterStore store;
  Parameter& logits = store.add("input.logits", random_tensor({size.batch, classes}, rng, 2.0));
  std::vector<int> labels;
  for (std::size_t n = 0; n < size.batch; ++n) labels.push_back(static_cast<int>(rng.below(classes)));
  return check_gradients(store, [&](ad::Tape& t) {
    return ad::soft_target_cross_entropy(t.param(logits), labels);
  });
}

BackboneConfig tiny_backbone(const GradCheckSize& size, std::size_t depth) {
  BackboneConfig b;
  b.image_size = 8;
  b.patch = 4;
  b.in_channels = 1;
  b.encoder_width = size.dim;
  b.encoder_depth = depth;
  b.encoder_heads = 2;
  b.mlp_ratio = 2;
  b.decoder_width = size.dim;
  b.decoder_depth = 1;
  b.decoder_heads = 2;
  b.cls_proj_dim = size.dim;
  b.mask_ratio = 0.5;
  return b;
}

GradCheckResult check_encoder_block(const GradCheckSize& size) {
  Rng rng(size.seed);
  const BackboneConfig b = tiny_backbone(size, 1);
  ParameterStore store;
  const Encoder encoder(store, b, rng);
  const Tensor patches = random_tensor({size.batch, b.num_patches(), b.patch_dim()}, rng, 0.5);
  const Tensor w = random_tensor({size.batch * (b.num_patches() + 1), b.encoder_width}, rng);
  return check_gradients(store, [&](ad::Tape& t) {
    const EncodedState s = encoder.encode(t, encoder.embed(t, patches), size.batch, b.num_patches(), true);
    return readout(t, s.normed, w);
  });
}

// Patch embedding, positions, mean pooling, projection and gamma4 fusion of
// two streams: affine end to end.
GradCheckResult check_linear_toy(const GradCheckSize& size) {
  Rng rng(size.seed);
  const BackboneConfig b = tiny_backbone(size, 0);
  ParameterStore store;
  const Encoder encoder(store, b, rng);
  const Linear proj = Linear::create(store, "projection.cls", b.encoder_width, b.cls_proj_dim, rng);
  FusionConfig fc;
  fc.strategy = FusionStrategy::kGamma4;
  fc.dim = size.dim;
  const Fusion fusion(store, fc, rng);
  const Tensor scene = random_tensor({size.batch, b.num_patches(), b.patch_dim()}, rng, 0.5);
  const Tensor person = random_tensor({size.batch, b.num_patches(), b.patch_dim()}, rng, 0.5);
  Tensor pool({size.batch, size.batch * b.num_patches()});
  for (std::size_t n = 0; n < size.batch; ++n) {
    for (std::size_t j = 0; j < b.num_patches(); ++j) {
      pool.at(n, n * b.num_patches() + j) = 1.0 / static_cast<double>(b.num_patches());
    }
  }
  const Tensor w = random_tensor({size.batch, size.dim}, rng);
  return check_gradients(store, [&](ad::Tape& t) {
    const ad::Var p = t.constant(pool);
    const ad::Var alpha = proj(t, ad::matmul(p, encoder.embed(t, scene)));
    const ad::Var beta = proj(t, ad::matmul(p, encoder.embed(t, person)));
    return readout(t, fusion(t, alpha, beta), w);
  });
}

}  // namespace

GradCheckResult check_gradients(ParameterStore& store,
                                const std::function<ad::Var(ad::Tape&)>& loss,
                                const GradCheckOptions& options) {
  store.zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  GradCheckResult result;
  for (Parameter* p : store.all()) {
    if (!p->trainable) continue;
    const std::size_t count = p->value.size();
    const std::size_t stride =
        options.max_probes == 0 || count <= options.max_probes ? 1 : (count + options.max_probes - 1) / options.max_probes;
    for (std::size_t i = 0; i < count; i += stride) {
      const double analytic = p->grad.empty() ? 0.0 : p->grad[i];
      const double orig = p->value[i];
      p->value[i] = orig + options.step;
      const double up = evaluate(loss);
      p->value[i] = orig - options.step;
      const double down = evaluate(loss);
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.probes;
      if (result.worst.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

std::vector<std::string> gradcheck_components() {
  return {"gamma1", "gamma2", "gamma3", "gamma4", "l1", "l2", "l3", "ce", "encoder_block", "linear_toy"};
}

GradCheckResult gradient_check(std::string_view component, const GradCheckSize& size) {
  if (component == "gamma1") return check_fusion(FusionStrategy::kGamma1, size);
  if (component == "gamma2") return check_fusion(FusionStrategy::kGamma2, size);
  if (component == "gamma3") return check_fusion(FusionStrategy::kGamma3, size);
  if (component == "gamma4") return check_fusion(FusionStrategy::kGamma4, size);
  if (component == "l1") return check_l1(size);
  if (component == "l2") return check_distill(true, size);
  if (component == "l3") return check_distill(false, size);
  if (component == "ce") return check_ce(size);
  if (component == "encoder_block") return check_encoder_block(size);
  if (component == "linear_toy") return check_linear_toy(size);
  throw Error("unknown gradient check component '" + std::string(component) + "'");
}

}  // namespace uniemo
