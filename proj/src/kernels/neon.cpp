// AArch64 NEON kernels. Same per-pair reduction shape as the AVX2 variant with
// 4 lanes: fused lane accumulation, fixed pairwise horizontal sum, fused tail.

#if defined(DTM_HAVE_NEON_KERNELS)

#include <arm_neon.h>

#include <cmath>
#include <limits>

#include "variants.hpp"

namespace dtm::kernels::detail {
namespace {

constexpr std::size_t kLanes = 4;

inline float finish(float32x4_t acc, const float* a, const float* b, std::size_t from, std::size_t dim) {
    const float32x2_t pair = vadd_f32(vget_low_f32(acc), vget_high_f32(acc));
    float r = vget_lane_f32(pair, 0) + vget_lane_f32(pair, 1);
    for (std::size_t i = from; i < dim; ++i) r = std::fma(a[i], b[i], r);
    return r;
}

float dot_neon(const float* a, const float* b, std::size_t dim) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + kLanes <= dim; i += kLanes) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    return finish(acc, a, b, i, dim);
}

inline void dot4(const float* row, const float* p0, const float* p1, const float* p2, const float* p3,
                 std::size_t dim, float out[4]) {
    float32x4_t a0 = vdupq_n_f32(0.0f);
    float32x4_t a1 = vdupq_n_f32(0.0f);
    float32x4_t a2 = vdupq_n_f32(0.0f);
    float32x4_t a3 = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + kLanes <= dim; i += kLanes) {
        const float32x4_t x = vld1q_f32(row + i);
        a0 = vfmaq_f32(a0, x, vld1q_f32(p0 + i));
        a1 = vfmaq_f32(a1, x, vld1q_f32(p1 + i));
        a2 = vfmaq_f32(a2, x, vld1q_f32(p2 + i));
        a3 = vfmaq_f32(a3, x, vld1q_f32(p3 + i));
    }
    out[0] = finish(a0, row, p0, i, dim);
    out[1] = finish(a1, row, p1, i, dim);
    out[2] = finish(a2, row, p2, i, dim);
    out[3] = finish(a3, row, p3, i, dim);
}

void max_dot_per_probe_neon(const float* rows, std::size_t n_rows, const float* probes, std::size_t n_probes,
                            std::size_t dim, float* best) {
    for (std::size_t p = 0; p < n_probes; ++p) best[p] = -std::numeric_limits<float>::infinity();
    const std::size_t blocked = n_probes - n_probes % 4;
    float d[4];
    for (std::size_t r = 0; r < n_rows; ++r) {
        const float* row = rows + r * dim;
        std::size_t p = 0;
        for (; p < blocked; p += 4) {
            const float* base = probes + p * dim;
            dot4(row, base, base + dim, base + 2 * dim, base + 3 * dim, dim, d);
            for (int k = 0; k < 4; ++k) {
                if (d[k] > best[p + k]) best[p + k] = d[k];
            }
        }
        for (; p < n_probes; ++p) {
            const float v = dot_neon(row, probes + p * dim, dim);
            if (v > best[p]) best[p] = v;
        }
    }
}

void max_dot_per_row_neon(const float* rows, std::size_t n_rows, const float* probes, std::size_t n_probes,
                          std::size_t dim, float* best) {
    const std::size_t blocked = n_probes - n_probes % 4;
    float d[4];
    for (std::size_t r = 0; r < n_rows; ++r) {
        const float* row = rows + r * dim;
        float m = -std::numeric_limits<float>::infinity();
        std::size_t p = 0;
        for (; p < blocked; p += 4) {
            const float* base = probes + p * dim;
            dot4(row, base, base + dim, base + 2 * dim, base + 3 * dim, dim, d);
            for (int k = 0; k < 4; ++k) {
                if (d[k] > m) m = d[k];
            }
        }
        for (; p < n_probes; ++p) {
            const float v = dot_neon(row, probes + p * dim, dim);
            if (v > m) m = v;
        }
        best[r] = m;
    }
}

}  // namespace

const KernelTable kNeonTable{Isa::Neon, &dot_neon, &max_dot_per_probe_neon, &max_dot_per_row_neon};

}  // namespace dtm::kernels::detail

#endif  // DTM_HAVE_NEON_KERNELS
