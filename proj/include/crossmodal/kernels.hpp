#pragma once

#include <cstddef>

namespace crossmodal::kern {

// Double-precision arithmetic kernels behind the tensor engine. Every entry
// has a scalar reference implementation; AVX2 (x86-64) and NEON (aarch64)
// variants are selected once at startup. matmul_nn, matmul_tn, the
// elementwise kernels and adamw_update accumulate in the same order in every
// backend and must match the scalar reference bit for bit; matmul_nt and the
// reductions reassociate and are only required to agree within tolerance
// (see tests/test_kernels.cpp). Transcendentals live in the tensor layer so
// all backends share one libm code path.
struct Ops {
    const char* name;

    // c[m x n] = a[m x k] * b[k x n]
    void (*matmul_nn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // c[m x n] = a[m x k] * b[n x k]^T
    void (*matmul_nt)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // c[k x n] = a[m x k]^T * b[m x n]
    void (*matmul_tn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);

    void (*vadd)(const double* x, const double* y, double* out, std::size_t n);
    void (*vsub)(const double* x, const double* y, double* out, std::size_t n);
    void (*vmul)(const double* x, const double* y, double* out, std::size_t n);
    void (*vdiv)(const double* x, const double* y, double* out, std::size_t n);
    // out = a * x
    void (*vscale)(double a, const double* x, double* out, std::size_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);

    double (*dot)(const double* x, const double* y, std::size_t n);
    double (*sumsq)(const double* x, std::size_t n);
    double (*vsum)(const double* x, std::size_t n);

    // Decoupled-weight-decay Adam step on one parameter array.
    //   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
    //   w -= lr * ((m*bc1) / (sqrt(v*bc2) + eps) + wd*w)
    // bc1 = 1/(1-b1^t), bc2 = 1/(1-b2^t) are precomputed by the caller.
    void (*adamw_update)(double* w, const double* g, double* m, double* v,
                         std::size_t n, double lr, double b1, double b2,
                         double eps, double wd, double bc1, double bc2);
};

enum class Backend { Auto, Scalar, Avx2, Neon };

const Ops& scalar_ops();
const Ops* avx2_ops();  // null when not compiled in or the CPU lacks AVX2
const Ops* neon_ops();  // null off aarch64

// The active table. Resolved once: CROSSMODAL_KERNELS=scalar|avx2|neon|auto
// overrides auto-detection.
const Ops& active();

// Force a backend (tests). Returns false and leaves the selection unchanged
// when the backend is unavailable.
bool set_backend(Backend b);

Backend parse_backend(const char* s);  // unknown -> ConfigError

}  // namespace crossmodal::kern
