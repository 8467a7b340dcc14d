// NEON kernels (aarch64 float64x2_t). Same contract as the AVX2 TU: separate
// mul/add (no fused ops) and scalar-identical accumulation order for the
// bit-exact group; lane reductions in matmul_nt, dot, sumsq and vsum are
// tolerance-class.

#include "crossmodal/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <algorithm>
#include <cmath>

namespace crossmodal::kern {
namespace {

inline double hsum(float64x2_t v) { return vgetq_lane_f64(v, 0) + vgetq_lane_f64(v, 1); }

void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            const float64x2_t va = vdupq_n_f64(aip);
            std::size_t j = 0;
            for (; j < n2; j += 2) {
                float64x2_t vc = vld1q_f64(crow + j);
                vc = vaddq_f64(vc, vmulq_f64(va, vld1q_f64(brow + j)));
                vst1q_f64(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    const std::size_t k2 = k & ~std::size_t(1);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            float64x2_t acc = vdupq_n_f64(0.0);
            std::size_t p = 0;
            for (; p < k2; p += 2)
                acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(arow + p), vld1q_f64(brow + p)));
            double s = hsum(acc);
            for (; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    std::fill(c, c + k * n, 0.0);
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t p = 0; p < m; ++p) {
        const double* arow = a + p * k;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double api = arow[i];
            double* crow = c + i * n;
            const float64x2_t va = vdupq_n_f64(api);
            std::size_t j = 0;
            for (; j < n2; j += 2) {
                float64x2_t vc = vld1q_f64(crow + j);
                vc = vaddq_f64(vc, vmulq_f64(va, vld1q_f64(brow + j)));
                vst1q_f64(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

template <typename VOp, typename SOp>
inline void elementwise(const double* x, const double* y, double* out,
                        std::size_t n, VOp vop, SOp sop) {
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vst1q_f64(out + i, vop(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) out[i] = sop(x[i], y[i]);
}

void vadd(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](float64x2_t a, float64x2_t b) { return vaddq_f64(a, b); },
                [](double a, double b) { return a + b; });
}
void vsub(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](float64x2_t a, float64x2_t b) { return vsubq_f64(a, b); },
                [](double a, double b) { return a - b; });
}
void vmul(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](float64x2_t a, float64x2_t b) { return vmulq_f64(a, b); },
                [](double a, double b) { return a * b; });
}
void vdiv(const double* x, const double* y, double* out, std::size_t n) {
    elementwise(x, y, out, n,
                [](float64x2_t a, float64x2_t b) { return vdivq_f64(a, b); },
                [](double a, double b) { return a / b; });
}

void vscale(double a, const double* x, double* out, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vst1q_f64(out + i, vmulq_f64(va, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) {
        float64x2_t vy = vld1q_f64(y + i);
        vy = vaddq_f64(vy, vmulq_f64(va, vld1q_f64(x + i)));
        vst1q_f64(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i < n2; i += 2)
        acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sumsq(const double* x, std::size_t n) { return dot(x, x, n); }

double vsum(const double* x, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i < n2; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void adamw_update(double* w, const double* g, double* m, double* v,
                  std::size_t n, double lr, double b1, double b2, double eps,
                  double wd, double bc1, double bc2) {
    const float64x2_t vb1 = vdupq_n_f64(b1);
    const float64x2_t vb2 = vdupq_n_f64(b2);
    const float64x2_t vob1 = vdupq_n_f64(1.0 - b1);
    const float64x2_t vob2 = vdupq_n_f64(1.0 - b2);
    const float64x2_t vbc1 = vdupq_n_f64(bc1);
    const float64x2_t vbc2 = vdupq_n_f64(bc2);
    const float64x2_t veps = vdupq_n_f64(eps);
    const float64x2_t vlr = vdupq_n_f64(lr);
    const float64x2_t vwd = vdupq_n_f64(wd);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) {
        const float64x2_t vg = vld1q_f64(g + i);
        float64x2_t vm = vld1q_f64(m + i);
        float64x2_t vv = vld1q_f64(v + i);
        vm = vaddq_f64(vmulq_f64(vb1, vm), vmulq_f64(vob1, vg));
        vv = vaddq_f64(vmulq_f64(vb2, vv), vmulq_f64(vob2, vmulq_f64(vg, vg)));
        vst1q_f64(m + i, vm);
        vst1q_f64(v + i, vv);
        const float64x2_t mhat = vmulq_f64(vm, vbc1);
        const float64x2_t vhat = vmulq_f64(vv, vbc2);
        const float64x2_t denom = vaddq_f64(vsqrtq_f64(vhat), veps);
        float64x2_t vw = vld1q_f64(w + i);
        const float64x2_t upd = vaddq_f64(vdivq_f64(mhat, denom), vmulq_f64(vwd, vw));
        vw = vsubq_f64(vw, vmulq_f64(vlr, upd));
        vst1q_f64(w + i, vw);
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

const Ops* neon_ops() {
    static const Ops ops = {
        "neon", matmul_nn, matmul_nt, matmul_tn, vadd,  vsub,
        vmul,   vdiv,      vscale,    axpy,      dot,   sumsq,
        vsum,   adamw_update,
    };
    return &ops;
}

}  // namespace crossmodal::kern

#else

namespace crossmodal::kern {
const Ops* neon_ops() { return nullptr; }
}  // namespace crossmodal::kern

#endif
