#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace crfrefine::cli {

struct BenchOptions {
  std::size_t n = 10000;
  std::size_t classes = 10;
  std::size_t k_base = 16;
  std::size_t k_ann = 5;
  std::size_t pool_factor = 4;
  std::size_t dim = 64;
  std::size_t iterations = 5;
  std::size_t annotations = 0;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::size_t n = 0;
  double index_seconds = 0.0;
  double unary_seconds = 0.0;
  std::vector<double> iteration_seconds;

  [[nodiscard]] double mean_seconds() const;
  [[nodiscard]] double max_seconds() const;
};

/// Synthetic instance of the requested size, then timed engine steps.
[[nodiscard]] BenchResult run_bench(const BenchOptions& options);

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Exit codes: 0 success, 1 validation error or bad usage,
/// 2 runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crfrefine::cli
