#include <algorithm>
#include <cmath>

#include "crfrefine/kernels.hpp"

namespace crfrefine::kernels::scalar {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void dot_rows(const double* query, const double* rows, std::size_t count, std::size_t dim,
              double* out) {
  for (std::size_t j = 0; j < count; ++j) out[j] = dot(query, rows + j * dim, dim);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double max_abs_diff(const double* a, const double* b, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

constexpr KernelTable kTable{Level::scalar, "scalar", dot, dot_rows, axpy, max_abs_diff};

}  // namespace

const KernelTable& table() noexcept { return kTable; }

}  // namespace crfrefine::kernels::scalar
