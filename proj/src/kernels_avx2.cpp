// AVX2 kernels. Compiled with -mavx2 in its own TU; the dispatcher installs
// this table only after __builtin_cpu_supports("avx2") succeeds.
//
// mul/add are kept separate (no FMA) and the j-inner loops preserve the
// scalar accumulation order, so matmul_nn, matmul_tn, the elementwise
// kernels and adamw_update are bit-exact against the scalar reference.
// matmul_nt, dot, sumsq and vsum reduce across lanes and may differ in the
// last ulps.

#include "crossmodal/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace crossmodal::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            const __m256d va = _mm256_set1_pd(aip);
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                __m256d vb = _mm256_loadu_pd(brow + j);
                vc = _mm256_add_pd(vc, _mm256_mul_pd(va, vb));
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    const std::size_t k4 = k & ~std::size_t(3);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            __m256d acc = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p < k4; p += 4) {
                acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(arow + p),
                                                       _mm256_loadu_pd(brow + p)));
            }
            double s = hsum(acc);
            for (; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    std::fill(c, c + k * n, 0.0);
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t p = 0; p < m; ++p) {
        const double* arow = a + p * k;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double api = arow[i];
            double* crow = c + i * n;
            const __m256d va = _mm256_set1_pd(api);
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                __m256d vb = _mm256_loadu_pd(brow + j);
                vc = _mm256_add_pd(vc, _mm256_mul_pd(va, vb));
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

template <typename VOp, typename SOp>
inline void elementwise(const double* x, const double* y, double* out,
                        std::size_t n, VOp vop, SOp sop) {
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        _mm256_storeu_pd(out + i,
                         vop(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = sop(x[i], y[i]);
}

void vadd(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](__m256d a, __m256d b) { return _mm256_add_pd(a, b); },
                [](double a, double b) { return a + b; });
}
void vsub(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](__m256d a, __m256d b) { return _mm256_sub_pd(a, b); },
                [](double a, double b) { return a - b; });
}
void vmul(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](__m256d a, __m256d b) { return _mm256_mul_pd(a, b); },
                [](double a, double b) { return a * b; });
}
void vdiv(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](__m256d a, __m256d b) { return _mm256_div_pd(a, b); },
                [](double a, double b) { return a / b; });
}

void vscale(double a, const double* x, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i < n4; i += 4)
        acc = _mm256_add_pd(
            acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sumsq(const double* x, std::size_t n) { return dot(x, x, n); }

double vsum(const double* x, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i < n4; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void adamw_update(double* w, const double* g, double* m, double* v,
                  std::size_t n, double lr, double b1, double b2, double eps,
                  double wd, double bc1, double bc2) {
    const __m256d vb1 = _mm256_set1_pd(b1);
    const __m256d vb2 = _mm256_set1_pd(b2);
    const __m256d vob1 = _mm256_set1_pd(1.0 - b1);
    const __m256d vob2 = _mm256_set1_pd(1.0 - b2);
    const __m256d vbc1 = _mm256_set1_pd(bc1);
    const __m256d vbc2 = _mm256_set1_pd(bc2);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d vwd = _mm256_set1_pd(wd);
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        __m256d vm = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        vm = _mm256_add_pd(_mm256_mul_pd(vb1, vm), _mm256_mul_pd(vob1, vg));
        vv = _mm256_add_pd(_mm256_mul_pd(vb2, vv),
                           _mm256_mul_pd(vob2, _mm256_mul_pd(vg, vg)));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_mul_pd(vm, vbc1);
        const __m256d vhat = _mm256_mul_pd(vv, vbc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        __m256d vw = _mm256_loadu_pd(w + i);
        const __m256d upd = _mm256_add_pd(_mm256_div_pd(mhat, denom),
                                          _mm256_mul_pd(vwd, vw));
        vw = _mm256_sub_pd(vw, _mm256_mul_pd(vlr, upd));
        _mm256_storeu_pd(w + i, vw);
    }
    for (; i < n; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i]);
        const double mhat = m[i] * bc1;
        const double vhat = v[i] * bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
    }
}

}  // namespace

const Ops* avx2_ops() {
#if defined(__GNUC__) || defined(__clang__)
    if (!__builtin_cpu_supports("avx2")) return nullptr;
#endif
    static const Ops ops = {
        "avx2", matmul_nn, matmul_nt, matmul_tn, vadd,  vsub,
        vmul,   vdiv,      vscale,    axpy,      dot,   sumsq,
        vsum,   adamw_update,
    };
    return &ops;
}

}  // namespace crossmodal::kern

#else

namespace crossmodal::kern {
const Ops* avx2_ops() { return nullptr; }
}  // namespace crossmodal::kern

#endif
