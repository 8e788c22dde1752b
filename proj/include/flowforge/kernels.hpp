#pragma once

#include <cstddef>
#include <string>

// Dense double-precision array kernels used by the model-training and
// clustering inner loops. Every kernel has a scalar reference implementation
// and an AVX2+FMA variant compiled in its own TU; the public entry points
// dispatch at runtime through function pointers chosen on first use.
//
// Matrix arguments are row-major and all gemm variants accumulate into C
// (callers zero C when they want a plain product).

namespace flowforge::kernels {

enum class Backend { Scalar, Avx2 };

bool backend_supported(Backend b);
Backend active_backend();
// Switching to an unsupported backend falls back to Scalar with a warning.
void set_backend(Backend b);
std::string backend_name(Backend b);

// Dispatched API -------------------------------------------------------------

double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
double reduce_sum(const double* a, std::size_t n);
double reduce_max(const double* a, std::size_t n);
// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);
// x[i] *= alpha
void scale(double alpha, double* x, std::size_t n);
// out[i] = a[i] + b[i]
void vadd(const double* a, const double* b, double* out, std::size_t n);
// out[i] = a[i] * b[i]
void vmul(const double* a, const double* b, double* out, std::size_t n);
// out[i] = k * a[i] + c
void vaffine(const double* a, double k, double c, double* out, std::size_t n);
// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);

// Nearest row of table[rows, dim] to query under squared Euclidean distance;
// ties resolve to the lowest index. Built on sq_dist, so it follows the
// active backend.
std::size_t nearest_row(const double* table, std::size_t rows, std::size_t dim,
                        const double* query, double* best_dist = nullptr);

// Per-backend entry points, used directly by the equivalence tests ----------

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
double reduce_sum(const double* a, std::size_t n);
double reduce_max(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void vadd(const double* a, const double* b, double* out, std::size_t n);
void vmul(const double* a, const double* b, double* out, std::size_t n);
void vaffine(const double* a, double k, double c, double* out, std::size_t n);
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
double reduce_sum(const double* a, std::size_t n);
double reduce_max(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void vadd(const double* a, const double* b, double* out, std::size_t n);
void vmul(const double* a, const double* b, double* out, std::size_t n);
void vaffine(const double* a, double k, double c, double* out, std::size_t n);
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k);
}  // namespace avx2

}  // namespace flowforge::kernels
