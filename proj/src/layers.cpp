#include "uniemo/layers.hpp"

#include <cmath>

namespace uniemo {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  Tensor w({in, out});
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  Linear l;
  l.weight = &store.add(name + ".weight", std::move(w));
  if (with_bias) l.bias = &store.add(name + ".bias", Tensor({out}));
  return l;
}

ad::Var Linear::operator()(ad::Tape& tape, ad::Var x) const {
  return ad::linear(x, tape.param(*weight), bias ? tape.param(*bias) : ad::Var());
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width) {
  LayerNorm n;
  n.weight = &store.add(name + ".weight", Tensor({width}, 1.0));
  n.bias = &store.add(name + ".bias", Tensor({width}));
  return n;
}

ad::Var LayerNorm::operator()(ad::Tape& tape, ad::Var x) const {
  return ad::layer_norm(x, tape.param(*weight), tape.param(*bias), eps);
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name,
                                          std::size_t width, std::size_t heads,
                                          std::size_t mlp_ratio, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw Error(name + ": width " + std::to_string(width) + " not divisible by " +
                std::to_string(heads) + " heads");
  }
  TransformerBlock b;
  b.heads = heads;
  b.norm1 = LayerNorm::create(store, name + ".norm1", width);
  b.qkv = Linear::create(store, name + ".attn.qkv", width, 3 * width, rng);
  b.proj = Linear::create(store, name + ".attn.proj", width, width, rng);
  b.norm2 = LayerNorm::create(store, name + ".norm2", width);
  b.fc1 = Linear::create(store, name + ".mlp.fc1", width, mlp_ratio * width, rng);
  b.fc2 = Linear::create(store, name + ".mlp.fc2", mlp_ratio * width, width, rng);
  return b;
}

ad::Var TransformerBlock::operator()(ad::Tape& tape, ad::Var x, std::size_t batch,
                                     std::size_t seq, Trace* trace) const {
  const ad::Var h = norm1(tape, x);
  const ad::Var attn = proj(tape, ad::attention(qkv(tape, h), batch, seq, heads));
  const ad::Var x1 = ad::add(x, attn);
  const ad::Var mlp = fc2(tape, ad::gelu(fc1(tape, norm2(tape, x1))));
  const ad::Var out = ad::add(x1, mlp);
  if (trace != nullptr) {
    trace->norm1_out = h;
    trace->output = out;
  }
  return out;
}

}  // namespace uniemo
