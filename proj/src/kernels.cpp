#include "pivot/kernels.hpp"

#include "kernels_table.hpp"
#include "pivot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pivot::kernels {

namespace detail {

// ---------------------------------------------------------------------------
// Scalar reference kernels. These define the semantics; the SIMD variants are
// checked against them in the equivalence tests.
// ---------------------------------------------------------------------------

namespace scalar {

double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(double* x, std::size_t n, double alpha) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

double sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max_value(const double* x, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = dot(a + r * cols, x, cols);
}

void matvec_t(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) axpy(x[r], a + r * cols, y, cols);
}

void rank1_update(double* a, std::size_t rows, std::size_t cols, double alpha,
                  const double* x, const double* y) {
    for (std::size_t r = 0; r < rows; ++r) axpy(alpha * x[r], y, a + r * cols, cols);
}

} // namespace scalar

const KernelTable kScalarTable{
    "scalar",   scalar::dot,      scalar::axpy,     scalar::scale,
    scalar::sum, scalar::max_value, scalar::matvec, scalar::matvec_t,
    scalar::rank1_update,
};

} // namespace detail

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const detail::KernelTable* select(Backend b) {
    const detail::KernelTable* avx2 = detail::avx2_table();
    switch (b) {
    case Backend::Scalar:
        return &detail::kScalarTable;
    case Backend::Avx2:
        if (!avx2 || !cpu_has_avx2())
            throw InvalidInput("kernels: AVX2 backend requested but not available on this CPU");
        return avx2;
    case Backend::Auto:
    default:
        return (avx2 && cpu_has_avx2()) ? avx2 : &detail::kScalarTable;
    }
}

const detail::KernelTable* g_table = select(Backend::Auto);
Backend g_backend = Backend::Auto;

} // namespace

bool avx2_available() { return detail::avx2_table() != nullptr && cpu_has_avx2(); }

void set_backend(Backend b) {
    g_table = select(b);
    g_backend = b;
}

Backend active_backend() { return g_backend; }

std::string_view backend_name() { return g_table->name; }

double dot(const double* x, const double* y, std::size_t n) { return g_table->dot(x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { g_table->axpy(alpha, x, y, n); }
void scale(double* x, std::size_t n, double alpha) { g_table->scale(x, n, alpha); }
double sum(const double* x, std::size_t n) { return g_table->sum(x, n); }
double max_value(const double* x, std::size_t n) { return g_table->max_value(x, n); }

void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    g_table->matvec(a, rows, cols, x, y);
}

void matvec_t(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    g_table->matvec_t(a, rows, cols, x, y);
}

void rank1_update(double* a, std::size_t rows, std::size_t cols, double alpha,
                  const double* x, const double* y) {
    g_table->rank1_update(a, rows, cols, alpha, x, y);
}

void softmax_inplace(double* x, std::size_t n) {
    if (n == 0) return;
    double m = max_value(x, n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i] - m);
    double s = sum(x, n);
    scale(x, n, 1.0 / s);
}

} // namespace pivot::kernels
