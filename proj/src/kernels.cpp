#include "comet/kernels.hpp"

#include <atomic>
#include <stdexcept>

namespace comet::kern {

#if defined(__x86_64__) || defined(_M_X64)
#define COMET_HAVE_AVX2_BUILD 1
namespace avx2 {
void gemm_nn(float* c, const float* a, const float* b, int m, int k, int n);
void gemm_tn(float* c, const float* a, const float* b, int m, int k, int n);
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k);
void row_scale_add(float* y, const float* x, const float* s, int rows, int cols);
void row_dot_add(float* out, const float* a, const float* b, int rows, int cols);
}  // namespace avx2
#else
#define COMET_HAVE_AVX2_BUILD 0
#endif

namespace {

struct Table {
    void (*nn)(float*, const float*, const float*, int, int, int);
    void (*tn)(float*, const float*, const float*, int, int, int);
    void (*nt)(float*, const float*, const float*, int, int, int);
    void (*rsa)(float*, const float*, const float*, int, int);
    void (*rda)(float*, const float*, const float*, int, int);
};

constexpr Table kScalar{ref::gemm_nn<float>, ref::gemm_tn<float>, ref::gemm_nt<float>,
                        ref::row_scale_add<float>, ref::row_dot_add<float>};

#if COMET_HAVE_AVX2_BUILD
constexpr Table kAvx2{avx2::gemm_nn, avx2::gemm_tn, avx2::gemm_nt, avx2::row_scale_add,
                      avx2::row_dot_add};
#endif

bool cpu_has_avx2() {
#if COMET_HAVE_AVX2_BUILD
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

std::atomic<const Table*> g_table{nullptr};
std::atomic<Isa> g_isa{Isa::scalar};

const Table* pick_default() {
#if COMET_HAVE_AVX2_BUILD
    if (cpu_has_avx2()) {
        g_isa.store(Isa::avx2);
        return &kAvx2;
    }
#endif
    g_isa.store(Isa::scalar);
    return &kScalar;
}

inline const Table& table() {
    const Table* t = g_table.load(std::memory_order_acquire);
    if (!t) {
        t = pick_default();
        g_table.store(t, std::memory_order_release);
    }
    return *t;
}

}  // namespace

Isa active_isa() {
    table();
    return g_isa.load();
}

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
    if (isa == Isa::scalar) return true;
    return cpu_has_avx2();
}

void force_isa(Isa isa) {
    if (!isa_available(isa)) throw std::runtime_error("requested ISA not available on this CPU");
    if (isa == Isa::scalar) {
        g_table.store(&kScalar);
        g_isa.store(Isa::scalar);
    } else {
#if COMET_HAVE_AVX2_BUILD
        g_table.store(&kAvx2);
        g_isa.store(Isa::avx2);
#endif
    }
}

void gemm_nn(float* c, const float* a, const float* b, int m, int k, int n) {
    table().nn(c, a, b, m, k, n);
}
void gemm_tn(float* c, const float* a, const float* b, int m, int k, int n) {
    table().tn(c, a, b, m, k, n);
}
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k) {
    table().nt(c, a, b, m, n, k);
}
void row_scale_add(float* y, const float* x, const float* s, int rows, int cols) {
    table().rsa(y, x, s, rows, cols);
}
void row_dot_add(float* out, const float* a, const float* b, int rows, int cols) {
    table().rda(out, a, b, rows, cols);
}

}  // namespace comet::kern
