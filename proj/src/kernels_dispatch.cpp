#include <cstdlib>
#include <limits>
#include <mutex>

#include "flowforge/common.hpp"
#include "flowforge/kernels.hpp"

namespace flowforge::kernels {

namespace {

struct Vtable {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sq_dist)(const double*, const double*, std::size_t);
    double (*reduce_sum)(const double*, std::size_t);
    double (*reduce_max)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double, double*, std::size_t);
    void (*vadd)(const double*, const double*, double*, std::size_t);
    void (*vmul)(const double*, const double*, double*, std::size_t);
    void (*vaffine)(const double*, double, double, double*, std::size_t);
    void (*gemm_nn)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
    void (*gemm_nt)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
    void (*gemm_tn)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
};

constexpr Vtable kScalarVt = {
    scalar::dot, scalar::sq_dist, scalar::reduce_sum, scalar::reduce_max,
    scalar::axpy, scalar::scale, scalar::vadd, scalar::vmul, scalar::vaffine,
    scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn,
};

constexpr Vtable kAvx2Vt = {
    avx2::dot, avx2::sq_dist, avx2::reduce_sum, avx2::reduce_max,
    avx2::axpy, avx2::scale, avx2::vadd, avx2::vmul, avx2::vaffine,
    avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn,
};

Backend g_backend = Backend::Scalar;
const Vtable* g_vt = &kScalarVt;
std::once_flag g_init;

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

void apply(Backend b) {
    g_backend = b;
    g_vt = (b == Backend::Avx2) ? &kAvx2Vt : &kScalarVt;
}

void init_once() {
    std::call_once(g_init, [] {
        Backend pick = cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
        if (const char* v = std::getenv("FLOWFORGE_SIMD")) {
            const std::string s(v);
            if (s == "scalar") pick = Backend::Scalar;
            else if (s == "avx2") pick = Backend::Avx2;
            else log_warn("unknown FLOWFORGE_SIMD value '" + s + "', ignoring");
        }
        if (pick == Backend::Avx2 && !cpu_has_avx2()) {
            log_warn("avx2 backend requested but CPU lacks AVX2+FMA, using scalar");
            pick = Backend::Scalar;
        }
        apply(pick);
    });
}

}  // namespace

bool backend_supported(Backend b) {
    return b == Backend::Scalar || (b == Backend::Avx2 && cpu_has_avx2());
}

Backend active_backend() {
    init_once();
    return g_backend;
}

void set_backend(Backend b) {
    init_once();
    if (!backend_supported(b)) {
        log_warn("backend " + backend_name(b) + " unsupported on this CPU, using scalar");
        b = Backend::Scalar;
    }
    apply(b);
}

std::string backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
    init_once();
    return g_vt->dot(a, b, n);
}
double sq_dist(const double* a, const double* b, std::size_t n) {
    init_once();
    return g_vt->sq_dist(a, b, n);
}
double reduce_sum(const double* a, std::size_t n) {
    init_once();
    return g_vt->reduce_sum(a, n);
}
double reduce_max(const double* a, std::size_t n) {
    init_once();
    return g_vt->reduce_max(a, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    init_once();
    g_vt->axpy(alpha, x, y, n);
}
void scale(double alpha, double* x, std::size_t n) {
    init_once();
    g_vt->scale(alpha, x, n);
}
void vadd(const double* a, const double* b, double* out, std::size_t n) {
    init_once();
    g_vt->vadd(a, b, out, n);
}
void vmul(const double* a, const double* b, double* out, std::size_t n) {
    init_once();
    g_vt->vmul(a, b, out, n);
}
void vaffine(const double* a, double k, double c, double* out, std::size_t n) {
    init_once();
    g_vt->vaffine(a, k, c, out, n);
}
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k) {
    init_once();
    g_vt->gemm_nn(a, b, c, m, n, k);
}
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k) {
    init_once();
    g_vt->gemm_nt(a, b, c, m, n, k);
}
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k) {
    init_once();
    g_vt->gemm_tn(a, b, c, m, n, k);
}

std::size_t nearest_row(const double* table, std::size_t rows, std::size_t dim,
                        const double* query, double* best_dist) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
        const double d = sq_dist(table + r * dim, query, dim);
        if (d < bd) {
            bd = d;
            best = r;
        }
    }
    if (best_dist) *best_dist = bd;
    return best;
}

}  // namespace flowforge::kernels
