#include <atomic>
#include <cstdlib>
#include <string>

#include "distilshield/errors.hpp"
#include "distilshield/kernels.hpp"

namespace distilshield::kernels {

namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
};

constexpr Table kScalarTable{scalar::dot, scalar::axpy, scalar::squared_distance};
#if defined(DISTILSHIELD_HAVE_AVX2)
constexpr Table kAvx2Table{avx2::dot, avx2::axpy, avx2::squared_distance};
#endif

const Table& table_for(Backend backend) {
#if defined(DISTILSHIELD_HAVE_AVX2)
  if (backend == Backend::avx2) return kAvx2Table;
#endif
  (void)backend;
  return kScalarTable;
}

Backend initial_backend() {
  if (const char* forced = std::getenv("DISTILSHIELD_SIMD")) {
    const std::string value(forced);
    if (value == "scalar") return Backend::scalar;
    if (value == "avx2" && backend_available(Backend::avx2)) return Backend::avx2;
  }
  return backend_available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

const Table& active() { return table_for(current().load(std::memory_order_relaxed)); }

void require_equal(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) +
                     " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "unknown";
}

bool backend_available(Backend backend) {
  switch (backend) {
    case Backend::scalar: return true;
    case Backend::avx2:
#if defined(DISTILSHIELD_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw ParameterError("SIMD backend '" + std::string(backend_name(backend)) +
                         "' is not available on this machine");
  }
  current().store(backend, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_equal(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_equal(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_equal(a.size(), b.size(), "squared_distance");
  return active().squared_distance(a.data(), b.data(), a.size());
}

void gemv(std::span<const double> weights, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<const double> bias,
          std::span<double> y) {
  require_equal(weights.size(), rows * cols, "gemv weights");
  require_equal(x.size(), cols, "gemv input");
  require_equal(bias.size(), rows, "gemv bias");
  require_equal(y.size(), rows, "gemv output");
  const Table& t = active();
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = t.dot(weights.data() + r * cols, x.data(), cols) + bias[r];
  }
}

void gemv_transposed_accumulate(std::span<const double> weights,
                                std::size_t rows, std::size_t cols,
                                std::span<const double> v, std::span<double> y) {
  require_equal(weights.size(), rows * cols, "gemv_t weights");
  require_equal(v.size(), rows, "gemv_t input");
  require_equal(y.size(), cols, "gemv_t output");
  const Table& t = active();
  for (std::size_t r = 0; r < rows; ++r) {
    if (v[r] != 0.0) t.axpy(v[r], weights.data() + r * cols, y.data(), cols);
  }
}

void outer_accumulate(std::span<const double> v, std::span<const double> x,
                      std::span<double> grad) {
  require_equal(grad.size(), v.size() * x.size(), "outer_accumulate");
  const Table& t = active();
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < v.size(); ++r) {
    if (v[r] != 0.0) t.axpy(v[r], x.data(), grad.data() + r * cols, cols);
  }
}

}  // namespace distilshield::kernels
