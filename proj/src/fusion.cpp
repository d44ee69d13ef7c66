#include "uniemo/fusion.hpp"

#include <cmath>

namespace uniemo {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// Weight and bias both ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Linear fan_in_linear(ParameterStore& store, const std::string& name, std::size_t in,
                     std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({in, out});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  Tensor b({out});
  for (double& v : b.data()) v = rng.uniform(-bound, bound);
  Linear l;
  l.weight = &store.add(name + ".weight", std::move(w));
  l.bias = &store.add(name + ".bias", std::move(b));
  return l;
}

}  // namespace

FusionStrategy parse_fusion_strategy(std::string_view name) {
  if (name == "gamma1") return FusionStrategy::kGamma1;
  if (name == "gamma2") return FusionStrategy::kGamma2;
  if (name == "gamma3") return FusionStrategy::kGamma3;
  if (name == "gamma4") return FusionStrategy::kGamma4;
  throw Error("unknown fusion strategy '" + std::string(name) +
              "' (expected gamma1, gamma2, gamma3 or gamma4)");
}

std::string_view fusion_strategy_name(FusionStrategy s) noexcept {
  switch (s) {
    case FusionStrategy::kGamma1: return "gamma1";
    case FusionStrategy::kGamma2: return "gamma2";
    case FusionStrategy::kGamma3: return "gamma3";
    case FusionStrategy::kGamma4: return "gamma4";
  }
  return "unknown";
}

Fusion::Fusion(ParameterStore& store, const FusionConfig& config, Rng& rng) : config_(config) {
  if (config_.kappa < 1) throw Error("fusion kappa must be at least 1");
  if (config_.dim < 1) throw Error("fusion dimension must be positive");
  if (config_.epsilon < 0.0) throw Error("fusion epsilon must be non-negative");
  const std::size_t d = config_.dim, k = config_.kappa;
  switch (config_.strategy) {
    case FusionStrategy::kGamma1: {
      const double init = 1.0 / static_cast<double>(k);
      for (std::size_t i = 0; i < k; ++i) {
        lambda.push_back(&store.add("fusion.gamma1.lambda" + std::to_string(i), Tensor({d}, init)));
        mu.push_back(&store.add("fusion.gamma1.mu" + std::to_string(i), Tensor({d}, init)));
      }
      norm = LayerNorm::create(store, "fusion.gamma1.norm", d);
      break;
    }
    case FusionStrategy::kGamma2:
      for (std::size_t i = 0; i < k; ++i) {
        eta.push_back(&store.add("fusion.gamma2.eta" + std::to_string(i), normal_tensor({d, 1}, 0.02, rng)));
        xi.push_back(&store.add("fusion.gamma2.xi" + std::to_string(i), normal_tensor({d, 1}, 0.02, rng)));
      }
      break;
    case FusionStrategy::kGamma3:
      for (std::size_t i = 0; i < k; ++i) {
        phi.push_back(&store.add("fusion.gamma3.phi" + std::to_string(i), normal_tensor({d, d}, 0.02, rng)));
        phi_prime.push_back(
            &store.add("fusion.gamma3.phi_prime" + std::to_string(i), normal_tensor({d, d}, 0.02, rng)));
      }
      w1 = fan_in_linear(store, "fusion.gamma3.w1", d * k, d, rng);
      w2 = fan_in_linear(store, "fusion.gamma3.w2", d, d, rng);
      w3 = fan_in_linear(store, "fusion.gamma3.w3", d, d, rng);
      break;
    case FusionStrategy::kGamma4:
      break;
  }
}

ad::Var Fusion::add_epsilon(ad::Tape& tape, ad::Var x) const {
  return ad::add_row(x, tape.constant(Tensor({config_.dim}, config_.epsilon)));
}

ad::Var Fusion::gamma1(ad::Tape& tape, ad::Var a, ad::Var b) const {
  ad::Var acc;
  for (std::size_t i = 0; i < config_.kappa; ++i) {
    const ad::Var term = ad::add(ad::mul_row(a, tape.param(*lambda[i])), ad::mul_row(b, tape.param(*mu[i])));
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  return add_epsilon(tape, norm(tape, acc));
}

ad::Var Fusion::gamma2(ad::Tape& tape, ad::Var a, ad::Var b) const {
  std::vector<ad::Var> sa, sb;
  for (std::size_t i = 0; i < config_.kappa; ++i) {
    sa.push_back(ad::matmul(a, tape.param(*eta[i])));
    sb.push_back(ad::matmul(b, tape.param(*xi[i])));
  }
  const ad::Var wa = ad::softmax_rows(ad::concat_cols(sa));
  const ad::Var wb = ad::softmax_rows(ad::concat_cols(sb));
  // sum_i w_i * x == (sum_i w_i) * x for per-sample scalar weights.
  const ad::Var mixed = ad::add(ad::mul_col(a, ad::sum_cols(wa)), ad::mul_col(b, ad::sum_cols(wb)));
  return add_epsilon(tape, ad::swish(mixed));
}

ad::Var Fusion::gamma3(ad::Tape& tape, ad::Var a, ad::Var b) const {
  std::vector<ad::Var> deltas;
  for (std::size_t i = 0; i < config_.kappa; ++i) {
    const ad::Var da = ad::mul(ad::softmax_rows(ad::matmul(a, tape.param(*phi[i]))), a);
    const ad::Var db = ad::mul(ad::softmax_rows(ad::matmul(b, tape.param(*phi_prime[i]))), b);
    deltas.push_back(ad::add(da, db));
  }
  const ad::Var con = ad::concat_cols(deltas);
  const ad::Var m = w2(tape, ad::relu(w1(tape, con)));
  const ad::Var g = ad::mul(m, ad::sigmoid(w3(tape, m)));
  return add_epsilon(tape, ad::relu(ad::mul(m, ad::sigmoid(g))));
}

ad::Var Fusion::operator()(ad::Tape& tape, ad::Var alpha, ad::Var beta) const {
  const Tensor& av = alpha.value();
  const Tensor& bv = beta.value();
  if (av.shape() != bv.shape() || av.cols() != config_.dim) {
    throw Error("fusion: alpha " + shape_str(av.shape()) + " and beta " + shape_str(bv.shape()) +
                " must both be N x " + std::to_string(config_.dim));
  }
  switch (config_.strategy) {
    case FusionStrategy::kGamma1: return gamma1(tape, alpha, beta);
    case FusionStrategy::kGamma2: return gamma2(tape, alpha, beta);
    case FusionStrategy::kGamma3: return gamma3(tape, alpha, beta);
    case FusionStrategy::kGamma4: return ad::add(alpha, beta);
  }
  throw Error("unreachable fusion strategy");
}

Tensor Fusion::apply(const Tensor& alpha, const Tensor& beta) const {
  ad::Tape tape(false);
  return (*this)(tape, tape.constant(alpha), tape.constant(beta)).value();
}

std::pair<Tensor, Tensor> Fusion::head_weights(const Tensor& alpha, const Tensor& beta) const {
  if (config_.strategy != FusionStrategy::kGamma2) throw Error("head weights exist only for gamma2");
  ad::Tape tape(false);
  const ad::Var a = tape.constant(alpha);
  const ad::Var b = tape.constant(beta);
  std::vector<ad::Var> sa, sb;
  for (std::size_t i = 0; i < config_.kappa; ++i) {
    sa.push_back(ad::matmul(a, tape.param(*eta[i])));
    sb.push_back(ad::matmul(b, tape.param(*xi[i])));
  }
  Tensor wa = ad::softmax_rows(ad::concat_cols(sa)).value();
  Tensor wb = ad::softmax_rows(ad::concat_cols(sb)).value();
  return {std::move(wa), std::move(wb)};
}

}  // namespace uniemo
