#include <atomic>
#include <cstdlib>
#include <string>

#include "dtm/error.hpp"
#include "variants.hpp"

namespace dtm::kernels {

std::string_view to_string(Isa isa) noexcept {
    switch (isa) {
        case Isa::Scalar: return "scalar";
        case Isa::Avx2: return "avx2";
        case Isa::Neon: return "neon";
    }
    return "unknown";
}

bool available(Isa isa) noexcept {
    switch (isa) {
        case Isa::Scalar: return true;
        case Isa::Avx2:
#if defined(DTM_HAVE_AVX2_KERNELS)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Isa::Neon:
#if defined(DTM_HAVE_NEON_KERNELS)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& table(Isa isa) {
    if (!available(isa)) fail(ErrorKind::Config, "kernel variant '" + std::string(to_string(isa)) + "' is unavailable");
    switch (isa) {
#if defined(DTM_HAVE_AVX2_KERNELS)
        case Isa::Avx2: return detail::kAvx2Table;
#endif
#if defined(DTM_HAVE_NEON_KERNELS)
        case Isa::Neon: return detail::kNeonTable;
#endif
        default: return detail::kScalarTable;
    }
}

namespace {

const KernelTable* initial_table() {
    if (const char* env = std::getenv("DTM_KERNEL"); env != nullptr && *env != '\0') {
        const std::string_view name(env);
        if (name == "scalar") return &table(Isa::Scalar);
        if (name == "avx2") return &table(Isa::Avx2);
        if (name == "neon") return &table(Isa::Neon);
        if (name != "auto") fail(ErrorKind::Config, "DTM_KERNEL must be scalar, avx2, neon or auto");
    }
    if (available(Isa::Avx2)) return &table(Isa::Avx2);
    if (available(Isa::Neon)) return &table(Isa::Neon);
    return &table(Isa::Scalar);
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> slot{initial_table()};
    return slot;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) { current().store(&table(isa), std::memory_order_release); }

}  // namespace dtm::kernels
