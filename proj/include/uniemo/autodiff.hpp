#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records one forward pass. Nodes are appended in evaluation order,
// so the reverse pass walks them backwards without a topological sort.
// Tapes are single-use and single-threaded; build a fresh one per step.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "uniemo/kernels.hpp"
#include "uniemo/params.hpp"
#include "uniemo/tensor.hpp"

namespace uniemo::ad {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  /// With record_grad = false no backward closures are kept (inference).
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient (inputs under test, saliency targets).
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; the gradient is added to p.grad by backward().
  /// Repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient reaching `v` during the last backward(); nullptr if none did.
  const Tensor* grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const noexcept { return record_grad_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(Var root);

  // Op-authoring interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  /// Gradient flowing into node `id` (valid inside its backward closure).
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  /// Zero-initialized accumulation buffer of an input node.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  bool record_grad_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_ids_;
};

// ---- ops ---------------------------------------------------------------
// Unless stated otherwise, tensors are 2-D [rows x cols].

Var matmul(Var a, Var b);                   // a[R x K] * b[K x N]
Var matmul_nt(Var a, Var b);                // a[R x K] * b[N x K]^T
Var linear(Var x, Var weight, Var bias);    // x * W + b, W [in x out]; bias may be invalid
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                      // elementwise
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var add_row(Var a, Var v);                  // a[R x C] + v[C] broadcast over rows
Var mul_row(Var a, Var v);                  // a[R x C] * v[C] broadcast over rows
Var mul_col(Var a, Var s);                  // a[R x C] * s[R x 1] broadcast over cols
Var sum_cols(Var a);                        // [R x 1] row sums
Var row_dot(Var a, Var b);                  // [R x 1] per-row dot products
Var sum(Var a);                             // scalar [1]
Var mean(Var a);                            // scalar [1]
Var relu(Var a);
Var sigmoid(Var a);
Var swish(Var a);                           // x * sigmoid(x)
Var gelu(Var a);                            // exact erf form
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
/// Each row divided by its L2 norm. With floor > 0 the norm is clamped to
/// floor; with floor <= 0 a norm below 1e-12 throws "degenerate feature row n".
Var row_normalize(Var x, double floor = 0.0);
Var gather_rows(Var x, std::vector<std::size_t> index);
Var concat_rows(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
/// Multi-head scaled dot-product self-attention. qkv is [batch*seq x 3C],
/// columns laid out as [q | k | v]; returns [batch*seq x C].
Var attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads);

}  // namespace uniemo::ad
