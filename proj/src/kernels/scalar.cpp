// Reference kernels. Plain left-to-right float accumulation; every SIMD
// variant is tested against these.

#include <limits>

#include "variants.hpp"

namespace dtm::kernels::detail {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t dim) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < dim; ++i) acc += a[i] * b[i];
    return acc;
}

void max_dot_per_probe_scalar(const float* rows, std::size_t n_rows, const float* probes, std::size_t n_probes,
                              std::size_t dim, float* best) {
    for (std::size_t p = 0; p < n_probes; ++p) best[p] = -std::numeric_limits<float>::infinity();
    for (std::size_t r = 0; r < n_rows; ++r) {
        const float* row = rows + r * dim;
        for (std::size_t p = 0; p < n_probes; ++p) {
            const float d = dot_scalar(row, probes + p * dim, dim);
            if (d > best[p]) best[p] = d;
        }
    }
}

void max_dot_per_row_scalar(const float* rows, std::size_t n_rows, const float* probes, std::size_t n_probes,
                            std::size_t dim, float* best) {
    for (std::size_t r = 0; r < n_rows; ++r) {
        const float* row = rows + r * dim;
        float m = -std::numeric_limits<float>::infinity();
        for (std::size_t p = 0; p < n_probes; ++p) {
            const float d = dot_scalar(row, probes + p * dim, dim);
            if (d > m) m = d;
        }
        best[r] = m;
    }
}

}  // namespace

const KernelTable kScalarTable{Isa::Scalar, &dot_scalar, &max_dot_per_probe_scalar, &max_dot_per_row_scalar};

}  // namespace dtm::kernels::detail
