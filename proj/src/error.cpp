#include "transport_meta/error.hpp"

namespace tmeta {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::config: return "ConfigError";
    case Errc::io: return "IoError";
    case Errc::missing_column: return "MissingColumn";
    case Errc::non_numeric_value: return "NonNumericValue";
    case Errc::missing_covariate: return "MissingCovariate";
    case Errc::target_row_has_outcome: return "TargetRowHasOutcome";
    case Errc::trial_row_missing_outcome: return "TrialRowMissingOutcome";
    case Errc::missing_adherence: return "MissingAdherence";
    case Errc::empty_stratum: return "EmptyStratum";
    case Errc::unknown_stratum: return "UnknownStratum";
    case Errc::unknown_term: return "UnknownTerm";
    case Errc::duplicate_term: return "DuplicateTerm";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::unknown_category: return "UnknownCategory";
    case Errc::singular: return "Singular";
    case Errc::separation: return "Separation";
    case Errc::not_converged: return "NotConverged";
    case Errc::arm_missing: return "ArmMissing";
    case Errc::trial_lacks_arm: return "TrialLacksArm";
    case Errc::probability_out_of_range: return "ProbabilityOutOfRange";
    case Errc::singular_bread: return "SingularBread";
    case Errc::too_many_failures: return "TooManyFailures";
    case Errc::insufficient_trials: return "InsufficientTrials";
    case Errc::trial_mismatch: return "TrialMismatch";
    case Errc::empty_adherence_cell: return "EmptyAdherenceCell";
    case Errc::invalid_contrast: return "InvalidContrast";
    case Errc::invalid_world: return "InvalidWorld";
    case Errc::empty_cell: return "EmptyCell";
    case Errc::empty_results: return "EmptyResults";
  }
  return "Unknown";
}

}  // namespace tmeta
