#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmeta {

enum class Errc {
  config,
  io,
  missing_column,
  non_numeric_value,
  missing_covariate,
  target_row_has_outcome,
  trial_row_missing_outcome,
  missing_adherence,
  empty_stratum,
  unknown_stratum,
  unknown_term,
  duplicate_term,
  dimension_mismatch,
  unknown_category,
  singular,
  separation,
  not_converged,
  arm_missing,
  trial_lacks_arm,
  probability_out_of_range,
  singular_bread,
  too_many_failures,
  insufficient_trials,
  trial_mismatch,
  empty_adherence_cell,
  invalid_contrast,
  invalid_world,
  empty_cell,
  empty_results,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure raised by the library carries one of the codes above so the
// C API and the CLI can map it to a stable status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace tmeta
