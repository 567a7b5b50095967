#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; vector variants are selected at runtime from what the CPU
// reports and must agree with the reference up to floating-point
// reassociation (see tests/test_kernels.cpp).

#include <cstddef>
#include <optional>
#include <string_view>

namespace crfrefine::kernels {

enum class Level { scalar, avx2, neon };

struct KernelTable {
  Level level;
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  // out[j] = query . rows[j * dim .. j * dim + dim) for j in [0, count)
  void (*dot_rows)(const double* query, const double* rows, std::size_t count, std::size_t dim,
                   double* out);

  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // max_i |a[i] - b[i]|
  double (*max_abs_diff)(const double* a, const double* b, std::size_t n);
};

namespace scalar {
const KernelTable& table() noexcept;
}
#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
const KernelTable& table() noexcept;
}
#endif
#if defined(__aarch64__)
namespace neon {
const KernelTable& table() noexcept;
}
#endif

[[nodiscard]] bool cpu_supports(Level level) noexcept;

/// Table chosen on first use: the CRFREFINE_KERNELS environment variable
/// ("scalar", "avx2", "neon") if set and supported, else the widest level the
/// CPU supports.
[[nodiscard]] const KernelTable& active() noexcept;

/// Overrides the active table. Returns false (and changes nothing) if the CPU
/// lacks the requested level.
bool select(Level level) noexcept;

[[nodiscard]] const KernelTable* table_for(Level level) noexcept;
[[nodiscard]] std::optional<Level> parse_level(std::string_view name) noexcept;
[[nodiscard]] std::string_view level_name(Level level) noexcept;

}  // namespace crfrefine::kernels
