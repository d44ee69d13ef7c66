#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "uniemo/autodiff.hpp"

namespace uniemo::ad {

namespace {

using kernels::Trans;

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("autodiff variables belong to different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
}

template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, df](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw Error("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out({r, n});
  kernels::gemm(Trans::kNo, Trans::kNo, r, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, r, k, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      kernels::gemm(Trans::kNo, Trans::kYes, r, k, n, g.ptr(), tp.value(ib).ptr(),
                    tp.grad_buffer(ia).ptr(), true);
    }
    if (tp.requires_grad(ib)) {
      kernels::gemm(Trans::kYes, Trans::kNo, k, n, r, tp.value(ia).ptr(), g.ptr(),
                    tp.grad_buffer(ib).ptr(), true);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw Error("matmul_nt: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + "^T");
  }
  Tensor out({r, n});
  kernels::gemm(Trans::kNo, Trans::kYes, r, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, r, k, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      kernels::gemm(Trans::kNo, Trans::kNo, r, k, n, g.ptr(), tp.value(ib).ptr(),
                    tp.grad_buffer(ia).ptr(), true);
    }
    if (tp.requires_grad(ib)) {
      kernels::gemm(Trans::kYes, Trans::kNo, n, k, r, g.ptr(), tp.value(ia).ptr(),
                    tp.grad_buffer(ib).ptr(), true);
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t r = xv.rows(), k = xv.cols(), n = wv.cols();
  if (wv.rows() != k) {
    throw Error("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  Tensor out({r, n});
  if (bias.valid()) {
    const Tensor& bv = bias.value();
    if (bv.size() != n) throw Error("linear: bias length " + std::to_string(bv.size()));
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = bv[j];
    }
  }
  kernels::gemm(Trans::kNo, Trans::kNo, r, n, k, xv.ptr(), wv.ptr(), out.ptr(), bias.valid());
  const std::size_t ix = x.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t ib = has_bias ? bias.id() : 0;
  const Var inputs[] = {x, weight, bias};
  return t.record(std::move(out), std::span<const Var>(inputs),
                  [ix, iw, ib, has_bias, r, k, n](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.out_grad(self);
                    if (tp.requires_grad(ix)) {
                      kernels::gemm(Trans::kNo, Trans::kYes, r, k, n, g.ptr(),
                                    tp.value(iw).ptr(), tp.grad_buffer(ix).ptr(), true);
                    }
                    if (tp.requires_grad(iw)) {
                      kernels::gemm(Trans::kYes, Trans::kNo, k, n, r, tp.value(ix).ptr(),
                                    g.ptr(), tp.grad_buffer(iw).ptr(), true);
                    }
                    if (has_bias && tp.requires_grad(ib)) {
                      Tensor& gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                      }
                    }
                  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!tp.requires_grad(id)) continue;
      Tensor& gx = tp.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      const Tensor& bv2 = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      const Tensor& av2 = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var add_row(Var a, Var v) {
  require_same_tape(a, v);
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (vv.size() != c) {
    throw Error("add_row: row vector " + shape_str(vv.shape()) + " vs " + shape_str(av.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += vv[j];
  }
  const std::size_t ia = a.id(), iv = v.id();
  return a.tape().record(std::move(out), {a, v}, [ia, iv, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(iv)) {
      Tensor& gv = tp.grad_buffer(iv);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
      }
    }
  });
}

Var mul_row(Var a, Var v) {
  require_same_tape(a, v);
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (vv.size() != c) {
    throw Error("mul_row: row vector " + shape_str(vv.shape()) + " vs " + shape_str(av.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= vv[j];
  }
  const std::size_t ia = a.id(), iv = v.id();
  return a.tape().record(std::move(out), {a, v}, [ia, iv, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& x = tp.value(ia);
    const Tensor& w = tp.value(iv);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * w[j];
      }
    }
    if (tp.requires_grad(iv)) {
      Tensor& gv = tp.grad_buffer(iv);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j] * x[i * c + j];
      }
    }
  });
}

Var mul_col(Var a, Var s) {
  require_same_tape(a, s);
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (sv.size() != r) {
    throw Error("mul_col: column vector " + shape_str(sv.shape()) + " vs " + shape_str(av.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= sv[i];
  }
  const std::size_t ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {a, s}, [ia, is, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& x = tp.value(ia);
    const Tensor& w = tp.value(is);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * w[i];
      }
    }
    if (tp.requires_grad(is)) {
      Tensor& gs = tp.grad_buffer(is);
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * x[i * c + j];
        gs[i] += acc;
      }
    }
  });
}

Var sum_cols(Var a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += av[i * c + j];
    out[i] = acc;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
    }
  });
}

Var row_dot(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "row_dot");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) out[i] = kernels::dot(av.row(i), bv.row(i));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      const Tensor& y = tp.value(ib);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * y[i * c + j];
      }
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      const Tensor& x = tp.value(ia);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gb[i * c + j] += g[i] * x[i * c + j];
      }
    }
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor({1}, acc), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0];
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var swish(Var a) {
  return unary(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var gelu(Var a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + x * pdf;
      });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.ptr() + i * c;
    double* y = out.ptr() + i * c;
    double m = x[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      const double s = kernels::dot(g.row(i), y.row(i));
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - s);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_tape(x, gamma);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gv.size() != c || bv.size() != c) throw Error("layer_norm: affine width mismatch");
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto rstd = std::make_shared<std::vector<double>>(r);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.ptr() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, r, c, xhat, rstd](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        const Tensor& gv2 = tp.value(ig);
        if (tp.requires_grad(ig)) {
          Tensor& gg = tp.grad_buffer(ig);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * (*xhat)[i * c + j];
          }
        }
        if (tp.requires_grad(ib)) {
          Tensor& gb = tp.grad_buffer(ib);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
          }
        }
        if (tp.requires_grad(ix)) {
          Tensor& gx = tp.grad_buffer(ix);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[i * c + j] * gv2[j];
              m1 += d;
              m2 += d * (*xhat)[i * c + j];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[i * c + j] * gv2[j];
              gx[i * c + j] += (*rstd)[i] * (d - m1 - (*xhat)[i * c + j] * m2);
            }
          }
        }
      });
}

Var row_normalize(Var x, double floor) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  auto norms = std::make_shared<std::vector<double>>(r);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    double n = std::sqrt(kernels::dot(xv.row(i), xv.row(i)));
    if (floor > 0.0) {
      n = std::max(n, floor);
    } else if (n < 1e-12) {
      throw Error("degenerate feature row " + std::to_string(i));
    }
    (*norms)[i] = n;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / n;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, r, c, norms, floor](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& y = tp.value(self);
    const Tensor& xv2 = tp.value(ix);
    Tensor& gx = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i) {
      const double n = (*norms)[i];
      const bool clamped = floor > 0.0 && std::sqrt(kernels::dot(xv2.row(i), xv2.row(i))) < floor;
      const double gy = clamped ? 0.0 : kernels::dot(g.row(i), y.row(i));
      for (std::size_t j = 0; j < c; ++j) {
        gx[i * c + j] += (g[i * c + j] - y[i * c + j] * gy) / n;
      }
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols(), src_rows = xv.rows();
  Tensor out({index.size(), c});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= src_rows) throw Error("gather_rows: index out of range");
    std::copy_n(xv.ptr() + index[r] * c, c, out.ptr() + r * c);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x},
                         [ix, c, index = std::move(index)](Tape& tp, std::size_t self) {
                           const Tensor& g = tp.out_grad(self);
                           Tensor& gx = tp.grad_buffer(ix);
                           for (std::size_t r = 0; r < index.size(); ++r) {
                             double* dst = gx.ptr() + index[r] * c;
                             const double* src = g.ptr() + r * c;
                             for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                           }
                         });
}

Var concat_rows(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t c = av.cols();
  if (bv.cols() != c) throw Error("concat_rows: column mismatch");
  const std::size_t ra = av.rows(), rb = bv.rows();
  Tensor out({ra + rb, c});
  std::copy_n(av.ptr(), av.size(), out.ptr());
  std::copy_n(bv.ptr(), bv.size(), out.ptr() + av.size());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, ra, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[ra * c + i];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t r = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw Error("concat_cols: mixed tapes");
    if (p.value().rows() != r) throw Error("concat_cols: row mismatch");
    widths.push_back(p.value().cols());
    ids.push_back(p.id());
    total += widths.back();
  }
  Tensor out({r, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(pv.ptr() + i * widths[k], widths[k], out.ptr() + i * total + off);
    }
    off += widths[k];
  }
  return t.record(std::move(out), parts, [ids, widths, r, total](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor& gp = tp.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            gp[i * widths[k] + j] += g[i * total + offset + j];
          }
        }
      }
      offset += widths[k];
    }
  });
}

Var attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& qv = qkv.value();
  if (qv.rows() != batch * seq || qv.cols() % 3 != 0) {
    throw Error("attention: qkv shape " + shape_str(qv.shape()) + " for batch " +
                std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  const std::size_t width = qv.cols() / 3;
  if (heads == 0 || width % heads != 0) throw Error("attention: width not divisible by heads");
  const std::size_t dh = width / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t stride = 3 * width;

  // Softmax probabilities per (sample, head), kept for the reverse pass.
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq);
  Tensor out({batch * seq, width});
  std::vector<double> q(seq * dh), k(seq * dh), v(seq * dh), o(seq * dh);

  auto pack = [&](const double* base, std::size_t col, std::vector<double>& dst) {
    for (std::size_t i = 0; i < seq; ++i) std::copy_n(base + i * stride + col, dh, dst.data() + i * dh);
  };

  for (std::size_t n = 0; n < batch; ++n) {
    const double* base = qv.ptr() + n * seq * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      pack(base, h * dh, q);
      pack(base, width + h * dh, k);
      pack(base, 2 * width + h * dh, v);
      double* p = probs->data() + (n * heads + h) * seq * seq;
      kernels::gemm(Trans::kNo, Trans::kYes, seq, seq, dh, q.data(), k.data(), p, false);
      for (std::size_t i = 0; i < seq; ++i) {
        double* row = p + i * seq;
        double m = row[0] * sc;
        for (std::size_t j = 0; j < seq; ++j) m = std::max(m, row[j] * sc);
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) z += (row[j] = std::exp(row[j] * sc - m));
        for (std::size_t j = 0; j < seq; ++j) row[j] /= z;
      }
      kernels::gemm(Trans::kNo, Trans::kNo, seq, dh, seq, p, v.data(), o.data(), false);
      for (std::size_t i = 0; i < seq; ++i) {
        std::copy_n(o.data() + i * dh, dh, out.ptr() + (n * seq + i) * width + h * dh);
      }
    }
  }

  const std::size_t iq = qkv.id();
  return qkv.tape().record(
      std::move(out), {qkv},
      [iq, batch, seq, heads, width, dh, sc, stride, probs](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        const Tensor& x = tp.value(iq);
        Tensor& gx = tp.grad_buffer(iq);
        std::vector<double> q(seq * dh), k(seq * dh), v(seq * dh), go(seq * dh);
        std::vector<double> dp(seq * seq), dq(seq * dh), dk(seq * dh), dv(seq * dh);
        for (std::size_t n = 0; n < batch; ++n) {
          const double* base = x.ptr() + n * seq * stride;
          double* gbase = gx.ptr() + n * seq * stride;
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < seq; ++i) {
              std::copy_n(base + i * stride + h * dh, dh, q.data() + i * dh);
              std::copy_n(base + i * stride + width + h * dh, dh, k.data() + i * dh);
              std::copy_n(base + i * stride + 2 * width + h * dh, dh, v.data() + i * dh);
              std::copy_n(g.ptr() + (n * seq + i) * width + h * dh, dh, go.data() + i * dh);
            }
            const double* p = probs->data() + (n * heads + h) * seq * seq;
            kernels::gemm(Trans::kNo, Trans::kYes, seq, seq, dh, go.data(), v.data(), dp.data(), false);
            kernels::gemm(Trans::kYes, Trans::kNo, seq, dh, seq, p, go.data(), dv.data(), false);
            for (std::size_t i = 0; i < seq; ++i) {
              double s = 0.0;
              for (std::size_t j = 0; j < seq; ++j) s += dp[i * seq + j] * p[i * seq + j];
              for (std::size_t j = 0; j < seq; ++j) {
                dp[i * seq + j] = p[i * seq + j] * (dp[i * seq + j] - s) * sc;
              }
            }
            kernels::gemm(Trans::kNo, Trans::kNo, seq, dh, seq, dp.data(), k.data(), dq.data(), false);
            kernels::gemm(Trans::kYes, Trans::kNo, seq, dh, seq, dp.data(), q.data(), dk.data(), false);
            for (std::size_t i = 0; i < seq; ++i) {
              double* dst = gbase + i * stride;
              for (std::size_t j = 0; j < dh; ++j) {
                dst[h * dh + j] += dq[i * dh + j];
                dst[width + h * dh + j] += dk[i * dh + j];
                dst[2 * width + h * dh + j] += dv[i * dh + j];
              }
            }
          }
        }
      });
}

}  // namespace uniemo::ad
