#pragma once

#include <stdexcept>
#include <string>

namespace crfrefine {

enum class ErrorCode {
  invalid_argument,
  degenerate_embedding,
  unsupported_format,
  corrupt_file,
  manifest_mismatch,
  graph_too_small,
  out_of_range,
  missing_annotations,
  too_large,
  capacity,
  missing_labels,
  io,
};

// Every library failure is reported as an Error carrying a machine-readable
// code; callers (CLI exit codes, HTTP statuses) switch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  // Input problems the caller can fix, as opposed to environment failures.
  [[nodiscard]] bool is_validation() const noexcept { return code_ != ErrorCode::io; }

 private:
  ErrorCode code_;
};

}  // namespace crfrefine
