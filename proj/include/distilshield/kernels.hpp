#pragma once

// Dense arithmetic kernels used by every layer. Each kernel has a portable
// scalar reference and, on x86-64, an AVX2/FMA variant. The active variant is
// picked once at startup from the CPU features (overridable through the
// DISTILSHIELD_SIMD environment variable: "scalar" or "avx2").

#include <cstddef>
#include <span>
#include <string_view>

namespace distilshield::kernels {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend backend);

/// True when the running CPU and the build both support `backend`.
bool backend_available(Backend backend);

Backend active_backend();

/// Switches the dispatch table. Throws ParameterError if unavailable.
void set_backend(Backend backend);

// Dispatched entry points. Spans must have equal length.
double dot(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// sum_i (a_i - b_i)^2
double squared_distance(std::span<const double> a, std::span<const double> b);

/// y = W x + bias, W row-major rows x cols.
void gemv(std::span<const double> weights, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<const double> bias,
          std::span<double> y);

/// y += W^T v, W row-major rows x cols.
void gemv_transposed_accumulate(std::span<const double> weights,
                                std::size_t rows, std::size_t cols,
                                std::span<const double> v, std::span<double> y);

/// G += v x^T, G row-major rows x cols.
void outer_accumulate(std::span<const double> v, std::span<const double> x,
                      std::span<double> grad);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
}  // namespace scalar

#if defined(DISTILSHIELD_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
}  // namespace avx2
#endif

}  // namespace distilshield::kernels
