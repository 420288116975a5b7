#pragma once

#include <cstddef>
#include <string_view>

namespace pivot::kernels {

// Dense double-precision primitives used by the model, world, and training
// inner loops. A scalar reference implementation always exists; an AVX2+FMA
// variant is selected at runtime when the CPU supports it. The two backends
// may differ in accumulation order, so results agree to rounding error, not
// bitwise; within one backend every call is deterministic.
enum class Backend { Auto, Scalar, Avx2 };

bool avx2_available();
// Throws InvalidInput when a forced backend is not available on this CPU.
void set_backend(Backend b);
Backend active_backend();
std::string_view backend_name();

// y = A x, A row-major (rows x cols), x has cols entries.
void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
// y = A^T x, A row-major (rows x cols), x has rows entries, y has cols.
void matvec_t(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
// A += alpha * x y^T, A row-major (rows x cols).
void rank1_update(double* a, std::size_t rows, std::size_t cols, double alpha,
                  const double* x, const double* y);

double dot(const double* x, const double* y, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double* x, std::size_t n, double alpha);
double sum(const double* x, std::size_t n);
double max_value(const double* x, std::size_t n);

// In-place softmax with max subtraction. Composed from the dispatched
// primitives; exp itself is evaluated scalar.
void softmax_inplace(double* x, std::size_t n);

} // namespace pivot::kernels
