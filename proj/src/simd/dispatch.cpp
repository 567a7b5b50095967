#include <atomic>
#include <cstdlib>

#include "crfrefine/kernels.hpp"

namespace crfrefine::kernels {
namespace {

const KernelTable* best_supported() noexcept {
  if (cpu_supports(Level::avx2)) return table_for(Level::avx2);
  if (cpu_supports(Level::neon)) return table_for(Level::neon);
  return &scalar::table();
}

const KernelTable* initial() noexcept {
  if (const char* env = std::getenv("CRFREFINE_KERNELS")) {
    if (auto level = parse_level(env); level && cpu_supports(*level)) return table_for(*level);
  }
  return best_supported();
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial()};
  return table;
}

}  // namespace

bool cpu_supports(Level level) noexcept {
  switch (level) {
    case Level::scalar:
      return true;
    case Level::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Level::neon:
#if defined(__aarch64__)
      return true;  // Advanced SIMD is mandatory on AArch64.
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* table_for(Level level) noexcept {
  switch (level) {
    case Level::scalar:
      return &scalar::table();
    case Level::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return &avx2::table();
#else
      return nullptr;
#endif
    case Level::neon:
#if defined(__aarch64__)
      return &neon::table();
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

bool select(Level level) noexcept {
  if (!cpu_supports(level)) return false;
  const KernelTable* t = table_for(level);
  if (t == nullptr) return false;
  current().store(t, std::memory_order_release);
  return true;
}

std::optional<Level> parse_level(std::string_view name) noexcept {
  if (name == "scalar") return Level::scalar;
  if (name == "avx2") return Level::avx2;
  if (name == "neon") return Level::neon;
  return std::nullopt;
}

std::string_view level_name(Level level) noexcept {
  switch (level) {
    case Level::scalar:
      return "scalar";
    case Level::avx2:
      return "avx2";
    case Level::neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace crfrefine::kernels
