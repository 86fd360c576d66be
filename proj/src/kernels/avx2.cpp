// AVX2 + FMA kernels. Functions carry target attributes instead of the whole
// translation unit being built with -mavx2, so nothing here leaks into code
// that runs on CPUs without AVX2.

#if defined(DTM_HAVE_AVX2_KERNELS)

#include <immintrin.h>

#include <limits>

#include "variants.hpp"

#define DTM_AVX2 __attribute__((target("avx2,fma")))

namespace dtm::kernels::detail {
namespace {

constexpr std::size_t kLanes = 8;

DTM_AVX2 inline float hsum(__m256 v) {
    __m128 s = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x1));
    return _mm_cvtss_f32(s);
}

// Adds the sub-vector tail to a finished lane sum; shared by every path so the
// per-pair reduction is identical however the pair is reached.
DTM_AVX2 inline float finish(__m256 acc, const float* a, const float* b, std::size_t from, std::size_t dim) {
    __m128 r = _mm_set_ss(hsum(acc));
    for (std::size_t i = from; i < dim; ++i) r = _mm_fmadd_ss(_mm_set_ss(a[i]), _mm_set_ss(b[i]), r);
    return _mm_cvtss_f32(r);
}

DTM_AVX2 float dot_avx2(const float* a, const float* b, std::size_t dim) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= dim; i += kLanes) acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    return finish(acc, a, b, i, dim);
}

// Dots of one row against four probes, sharing each row load.
DTM_AVX2 inline void dot4(const float* row, const float* p0, const float* p1, const float* p2, const float* p3,
                          std::size_t dim, float out[4]) {
    __m256 a0 = _mm256_setzero_ps();
    __m256 a1 = _mm256_setzero_ps();
    __m256 a2 = _mm256_setzero_ps();
    __m256 a3 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= dim; i += kLanes) {
        const __m256 x = _mm256_loadu_ps(row + i);
        a0 = _mm256_fmadd_ps(x, _mm256_loadu_ps(p0 + i), a0);
        a1 = _mm256_fmadd_ps(x, _mm256_loadu_ps(p1 + i), a1);
        a2 = _mm256_fmadd_ps(x, _mm256_loadu_ps(p2 + i), a2);
        a3 = _mm256_fmadd_ps(x, _mm256_loadu_ps(p3 + i), a3);
    }
    out[0] = finish(a0, row, p0, i, dim);
    out[1] = finish(a1, row, p1, i, dim);
    out[2] = finish(a2, row, p2, i, dim);
    out[3] = finish(a3, row, p3, i, dim);
}

DTM_AVX2 void max_dot_per_probe_avx2(const float* rows, std::size_t n_rows, const float* probes,
                                     std::size_t n_probes, std::size_t dim, float* best) {
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
            const float v = dot_avx2(row, probes + p * dim, dim);
            if (v > best[p]) best[p] = v;
        }
    }
}

DTM_AVX2 void max_dot_per_row_avx2(const float* rows, std::size_t n_rows, const float* probes,
                                   std::size_t n_probes, std::size_t dim, float* best) {
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
            const float v = dot_avx2(row, probes + p * dim, dim);
            if (v > m) m = v;
        }
        best[r] = m;
    }
}

}  // namespace

const KernelTable kAvx2Table{Isa::Avx2, &dot_avx2, &max_dot_per_probe_avx2, &max_dot_per_row_avx2};

}  // namespace dtm::kernels::detail

#endif  // DTM_HAVE_AVX2_KERNELS
