#pragma once
// Inner-loop arithmetic kernels with a scalar reference path and SIMD variants.
//
// Every hot loop in the engine (GEMM rows, im2col convolution, the MEB scan
// update) funnels through this table. The active table is chosen once per
// process from CPU features; SSMSNAKE_KERNELS=scalar|avx2 forces a choice.

#include <cstddef>
#include <string_view>

namespace ssmsnake::kernels {

struct KernelTable {
    const char* name;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // z[i] = gate * (z[i] + b * x[i])
    void (*gated_accumulate)(double gate, double b, const double* x, double* z, std::size_t n);
    // y[i] += a[i] * b[i]
    void (*hadamard_accumulate)(const double* a, const double* b, double* y, std::size_t n);
    // C(m x n) += A * B with A(i, p) = a[i * a_rs + p * a_cs] and B row-major (k x n)
    void (*gemm)(const double* a, std::size_t a_rs, std::size_t a_cs, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n);
    // true iff no element is inf or NaN
    bool (*all_finite)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
// Returns nullptr when the variant is not compiled in or the CPU lacks support.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Table used by the engine. Resolved on first call.
const KernelTable& active();

// Overrides the active table by name ("scalar", "avx2", "neon"); returns false if unavailable.
bool select(std::string_view name);

// C(m x n) += A(m x k) * B(k x n), all row-major.
void gemm_accumulate(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n);
// C(m x n) += A(m x k) * B(n x k)^T
void gemm_nt_accumulate(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);
// C(k x n) += A(m x k)^T * B(m x n)
void gemm_tn_accumulate(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);

}  // namespace ssmsnake::kernels
