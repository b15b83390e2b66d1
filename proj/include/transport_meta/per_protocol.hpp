#pragma once

#include "transport_meta/dataset.hpp"
#include "transport_meta/estimate.hpp"
#include "transport_meta/glm.hpp"

#include <string>
#include <vector>

namespace tmeta {

// Assign z and enforce receipt of a, versus assign z' and enforce a'.
struct JointContrast {
  std::string z;
  std::string a;
  std::string z_prime;
  std::string a_prime;

  // InvalidContrast when both sides name the same (assignment, receipt) pair.
  void validate() const;
};

// Nested regression for one (assignment, receipt) pair: Y on (X, L) among
// adherent rows, then those predictions on X over the whole arm.
struct ThetaModel {
  FittedGlm inner_fit;
  FittedGlm outer_fit;
};

struct PpTeResult {
  ContrastEstimate estimate;
  ThetaModel theta_z;
  ThetaModel theta_zprime;
};

PpTeResult estimate_pp_te(const CompositeDataset& data, int trial, const JointContrast& contrast,
                          const DesignSpec& inner_design, const DesignSpec& outer_design,
                          const AnalysisOptions& options = {});

struct AdherenceModelSpec {
  DesignSpec design;
  // Pooled fits get trial-indicator main effects.
  bool trial_indicators = true;
  // Separate fits per trial instead of one pooled fit per arm.
  bool per_trial = false;
};

// Fitted adherence probabilities below this on a contributing row produce a
// SequentialPositivity warning.
inline constexpr double kAdherencePositivityFloor = 1e-6;

ContrastEstimate estimate_pp_w(const CompositeDataset& data, const JointContrast& contrast,
                               const DesignSpec& participation_design, const TreatmentModelSpec& treatment,
                               const AdherenceModelSpec& adherence, const AnalysisOptions& options = {},
                               const std::vector<int>& collection = {});

}  // namespace tmeta
