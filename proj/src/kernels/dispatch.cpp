#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "uniemo/kernels.hpp"
#include "uniemo/tensor.hpp"

namespace uniemo::kernels {

namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("UNIEMO_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::kScalar;
    if (v == "avx2" && cpu_has_avx2()) return Backend::kAvx2;
  }
  return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

void transpose_into(const double* src, std::size_t rows, std::size_t cols,
                    std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

}  // namespace

bool backend_available(Backend backend) noexcept {
  return backend == Backend::kScalar || cpu_has_avx2();
}

Backend active_backend() noexcept { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw Error("kernel backend " + std::string(backend_name(backend)) +
                " is not supported on this CPU");
  }
  backend_slot().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) noexcept {
  switch (backend) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
  }
  return "unknown";
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    }
    return;
  }
  thread_local std::vector<double> pack_a;
  thread_local std::vector<double> pack_b;
  if (ta == Trans::kYes) {
    transpose_into(a, k, m, pack_a);
    a = pack_a.data();
  }
  if (tb == Trans::kYes) {
    transpose_into(b, n, k, pack_b);
    b = pack_b.data();
  }
  if (active_backend() == Backend::kAvx2) {
    avx2::gemm_nn(m, n, k, a, b, c, accumulate);
  } else {
    scalar::gemm_nn(m, n, k, a, b, c, accumulate);
  }
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("dot: length mismatch");
  return active_backend() == Backend::kAvx2 ? avx2::dot(x.data(), y.data(), x.size())
                                            : scalar::dot(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error("axpy: length mismatch");
  if (active_backend() == Backend::kAvx2) {
    avx2::axpy(alpha, x.data(), y.data(), x.size());
  } else {
    scalar::axpy(alpha, x.data(), y.data(), x.size());
  }
}

}  // namespace uniemo::kernels
