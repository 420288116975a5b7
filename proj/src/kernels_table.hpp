#pragma once

// Internal dispatch table shared by the scalar and SIMD kernel translation
// units. Not installed; include only from src/kernels*.cpp.

#include <cstddef>
#include <string_view>

namespace pivot::kernels::detail {

struct KernelTable {
    std::string_view name;
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double*, std::size_t, double);
    double (*sum)(const double*, std::size_t);
    double (*max_value)(const double*, std::size_t);
    void (*matvec)(const double*, std::size_t, std::size_t, const double*, double*);
    void (*matvec_t)(const double*, std::size_t, std::size_t, const double*, double*);
    void (*rank1_update)(double*, std::size_t, std::size_t, double, const double*, const double*);
};

// Defined in kernels_avx2.cpp; nullptr when the build targets a non-x86 arch.
const KernelTable* avx2_table();

} // namespace pivot::kernels::detail
