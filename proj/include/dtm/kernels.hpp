#pragma once

#include <cstddef>
#include <string_view>

namespace dtm::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view to_string(Isa isa) noexcept;

/// Channel-reduction kernels. `rows` and `probes` are dense row-major blocks
/// of `dim`-length vectors. Every variant reduces each (row, probe) pair in a
/// fixed order, so a given variant is bitwise reproducible regardless of how
/// work is split across threads.
struct KernelTable {
    Isa isa;

    float (*dot)(const float* a, const float* b, std::size_t dim);

    /// best[p] = max over r of dot(rows[r], probes[p]); -inf when n_rows == 0.
    void (*max_dot_per_probe)(const float* rows, std::size_t n_rows, const float* probes,
                              std::size_t n_probes, std::size_t dim, float* best);

    /// best[r] = max over p of dot(rows[r], probes[p]); -inf when n_probes == 0.
    void (*max_dot_per_row)(const float* rows, std::size_t n_rows, const float* probes,
                            std::size_t n_probes, std::size_t dim, float* best);
};

bool available(Isa isa) noexcept;

/// Throws Config when the variant is not compiled in or unsupported by the CPU.
const KernelTable& table(Isa isa);

/// The process-wide table. Chosen on first use: DTM_KERNEL (scalar|avx2|neon|auto)
/// if set, otherwise the widest variant the CPU supports.
const KernelTable& active();

/// Overrides the process-wide choice. Not safe to call while kernels run.
void select(Isa isa);

}  // namespace dtm::kernels
