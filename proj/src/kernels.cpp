#include "ssmsnake/kernels.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <string>

#if defined(__x86_64__) || defined(_M_X64)
#define SSMSNAKE_X86 1
#include <immintrin.h>
#else
#define SSMSNAKE_X86 0
#endif

#if defined(__aarch64__) && defined(__ARM_NEON)
#define SSMSNAKE_NEON 1
#include <arm_neon.h>
#else
#define SSMSNAKE_NEON 0
#endif

namespace ssmsnake::kernels {
namespace {

// ---------------------------------------------------------------------------
// Scalar reference
// ---------------------------------------------------------------------------

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gated_accumulate_scalar(double gate, double b, const double* x, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = gate * (z[i] + b * x[i]);
}

void hadamard_accumulate_scalar(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

bool all_finite_scalar(const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

template <void (*Axpy)(double, const double*, double*, std::size_t)>
void gemm_rows(const double* a, std::size_t a_rs, std::size_t a_cs, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * a_rs + p * a_cs];
            if (av != 0.0) Axpy(av, b + p * n, c + i * n, n);
        }
}

constexpr KernelTable kScalar{"scalar", dot_scalar, axpy_scalar, gated_accumulate_scalar,
                              hadamard_accumulate_scalar, gemm_rows<axpy_scalar>, all_finite_scalar};

// ---------------------------------------------------------------------------
// AVX2 + FMA
// ---------------------------------------------------------------------------
#if SSMSNAKE_X86

__attribute__((target("avx2,fma"))) double dot_avx2(const double* a, const double* b,
                                                     std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc0 = _mm256_add_pd(acc0, acc1);
    __m128d lo = _mm256_castpd256_pd128(acc0);
    __m128d hi = _mm256_extractf128_pd(acc0, 1);
    lo = _mm_add_pd(lo, hi);
    double s = _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

__attribute__((target("avx2,fma"))) void axpy_avx2(double alpha, const double* x, double* y,
                                                    std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2,fma"))) void gated_accumulate_avx2(double gate, double b,
                                                                const double* x, double* z,
                                                                std::size_t n) {
    const __m256d vg = _mm256_set1_pd(gate);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d t = _mm256_fmadd_pd(vb, _mm256_loadu_pd(x + i), _mm256_loadu_pd(z + i));
        _mm256_storeu_pd(z + i, _mm256_mul_pd(vg, t));
    }
    for (; i < n; ++i) z[i] = gate * (z[i] + b * x[i]);
}

__attribute__((target("avx2,fma"))) void hadamard_accumulate_avx2(const double* a,
                                                                   const double* b, double* y,
                                                                   std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(
            y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

// 4 x 8 register tiles; leftover rows go through axpy, leftover columns are scalar.
__attribute__((target("avx2,fma"))) void gemm_avx2(const double* a, std::size_t a_rs, std::size_t a_cs,
                                                    const double* b, double* c, std::size_t m, std::size_t k,
                                                    std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + i * a_rs;
        double* c0 = c + i * n;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256d acc[4][2];
            for (int r = 0; r < 4; ++r) {
                acc[r][0] = _mm256_loadu_pd(c0 + r * n + j);
                acc[r][1] = _mm256_loadu_pd(c0 + r * n + j + 4);
            }
            for (std::size_t p = 0; p < k; ++p) {
                const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
                const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
                const double* ap = a0 + p * a_cs;
                for (int r = 0; r < 4; ++r) {
                    const __m256d av = _mm256_broadcast_sd(ap + r * a_rs);
                    acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
                    acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
                }
            }
            for (int r = 0; r < 4; ++r) {
                _mm256_storeu_pd(c0 + r * n + j, acc[r][0]);
                _mm256_storeu_pd(c0 + r * n + j + 4, acc[r][1]);
            }
        }
        for (; j + 4 <= n; j += 4) {
            __m256d acc[4];
            for (int r = 0; r < 4; ++r) acc[r] = _mm256_loadu_pd(c0 + r * n + j);
            for (std::size_t p = 0; p < k; ++p) {
                const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
                const double* ap = a0 + p * a_cs;
                for (int r = 0; r < 4; ++r) acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + r * a_rs), b0, acc[r]);
            }
            for (int r = 0; r < 4; ++r) _mm256_storeu_pd(c0 + r * n + j, acc[r]);
        }
        for (; j < n; ++j)
            for (int r = 0; r < 4; ++r) {
                double s = c0[r * n + j];
                for (std::size_t p = 0; p < k; ++p) s += a0[r * a_rs + p * a_cs] * b[p * n + j];
                c0[r * n + j] = s;
            }
    }
    if (i < m) gemm_rows<axpy_avx2>(a + i * a_rs, a_rs, a_cs, b, c + i * n, m - i, k, n);
}

__attribute__((target("avx2,fma"))) bool all_finite_avx2(const double* x, std::size_t n) {
    // |x| <= DBL_MAX is false for inf and NaN alike.
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d big = _mm256_set1_pd(std::numeric_limits<double>::max());
    __m256d ok = _mm256_castsi256_pd(_mm256_set1_epi64x(-1));
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        ok = _mm256_and_pd(ok, _mm256_cmp_pd(_mm256_andnot_pd(sign, _mm256_loadu_pd(x + i)), big, _CMP_LE_OQ));
    if (_mm256_movemask_pd(ok) != 0xF) return false;
    for (; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

constexpr KernelTable kAvx2{"avx2", dot_avx2, axpy_avx2, gated_accumulate_avx2,
                            hadamard_accumulate_avx2, gemm_avx2, all_finite_avx2};

bool cpu_has_avx2() {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

// ---------------------------------------------------------------------------
// NEON (aarch64)
// ---------------------------------------------------------------------------
#if SSMSNAKE_NEON

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gated_accumulate_neon(double gate, double b, const double* x, double* z, std::size_t n) {
    const float64x2_t vg = vdupq_n_f64(gate);
    const float64x2_t vb = vdupq_n_f64(b);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(z + i, vmulq_f64(vg, vfmaq_f64(vld1q_f64(z + i), vb, vld1q_f64(x + i))));
    for (; i < n; ++i) z[i] = gate * (z[i] + b * x[i]);
}

void hadamard_accumulate_neon(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

constexpr KernelTable kNeon{"neon", dot_neon, axpy_neon, gated_accumulate_neon,
                            hadamard_accumulate_neon, gemm_rows<axpy_neon>, all_finite_scalar};
#endif

const KernelTable* resolve_default() {
    if (const char* env = std::getenv("SSMSNAKE_KERNELS")) {
        std::string_view want(env);
        if (want == "scalar") return &kScalar;
        if (want == "avx2" && avx2_table()) return avx2_table();
        if (want == "neon" && neon_table()) return neon_table();
    }
    if (const KernelTable* t = avx2_table()) return t;
    if (const KernelTable* t = neon_table()) return t;
    return &kScalar;
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if SSMSNAKE_X86
    static const bool ok = cpu_has_avx2();
    return ok ? &kAvx2 : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_table() {
#if SSMSNAKE_NEON
    return &kNeon;
#else
    return nullptr;
#endif
}

const KernelTable& active() {
    const KernelTable* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = resolve_default();
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

bool select(std::string_view name) {
    const KernelTable* t = nullptr;
    if (name == "scalar") t = &kScalar;
    else if (name == "avx2") t = avx2_table();
    else if (name == "neon") t = neon_table();
    if (!t) return false;
    g_active.store(t, std::memory_order_release);
    return true;
}

void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
    active().gemm(a, k, 1, b, c, m, k, n);
}

void gemm_nt_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    const KernelTable& kt = active();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += kt.dot(a + i * k, b + j * k, k);
}

void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    active().gemm(a, 1, k, b, c, k, m, n);
}

}  // namespace ssmsnake::kernels
