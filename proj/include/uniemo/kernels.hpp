#pragma once

// Dense double-precision kernels behind the tensor ops.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The active backend is chosen once at startup from CPUID and can
// be pinned with UNIEMO_SIMD=scalar|avx2 or set_backend(). Results of the
// two backends agree to rounding (FMA contraction changes the last bits),
// so a run is bitwise reproducible only under a fixed backend.

#include <cstddef>
#include <span>
#include <string_view>

namespace uniemo::kernels {

enum class Backend { kScalar, kAvx2 };

bool backend_available(Backend backend) noexcept;
Backend active_backend() noexcept;
/// Throws uniemo::Error if the backend is not supported on this CPU.
void set_backend(Backend backend);
std::string_view backend_name(Backend backend) noexcept;

enum class Trans { kNo, kYes };

/// C[m x n] = op(A) * op(B) (+ C when accumulate), all row-major.
/// op(A) is m x k and op(B) is k x n; when transposed, A is stored k x m
/// and B is stored n x k.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

double dot(std::span<const double> x, std::span<const double> y);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Per-backend entry points; the dispatching wrappers above forward here.
// Exposed so equivalence tests can run both sides on the same inputs.
namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

}  // namespace uniemo::kernels
