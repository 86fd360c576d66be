#pragma once

#include "dtm/kernels.hpp"

namespace dtm::kernels::detail {

extern const KernelTable kScalarTable;

#if defined(DTM_HAVE_AVX2_KERNELS)
extern const KernelTable kAvx2Table;
#endif

#if defined(DTM_HAVE_NEON_KERNELS)
extern const KernelTable kNeonTable;
#endif

}  // namespace dtm::kernels::detail
