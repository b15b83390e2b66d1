#pragma once

#include "transport_meta/dataset.hpp"
#include "transport_meta/estimate.hpp"
#include "transport_meta/glm.hpp"

#include <vector>

namespace tmeta {

// Main effects of every baseline covariate.
DesignSpec main_effects(const CompositeDataset& data);

struct SingleTrialConfig {
  DesignSpec outcome_design;
  DesignSpec participation_design;
  TreatmentModelSpec treatment;
  AnalysisOptions options;
};

// Arm-specific outcome regressions within one trial; their difference is the
// trial's conditional mean difference.
struct CateModel {
  FittedGlm h_z;
  FittedGlm h_zprime;
};

struct PsiTeResult {
  ContrastEstimate estimate;
  CateModel cate;
};

// Outcome-model transport of one trial's effect: target-sample average of the
// difference of the two arm regressions. `bias` adds a sensitivity term.
PsiTeResult estimate_psi_te(const CompositeDataset& data, int trial, const Contrast& contrast,
                            const DesignSpec& outcome_design, const AnalysisOptions& options = {},
                            const BiasFunction* bias = nullptr);

// Weighting transport of one trial's effect: inverse treatment probability
// times participation odds, normalized by the target sample size.
ContrastEstimate estimate_psi_w(const CompositeDataset& data, int trial, const Contrast& contrast,
                                const DesignSpec& participation_design, const TreatmentModelSpec& treatment,
                                const AnalysisOptions& options = {}, const BiasFunction* bias = nullptr);

// Crude arm-mean difference within trial `stratum`; stratum 0 reads the
// target benchmark columns of emulation datasets.
ContrastEstimate unadjusted_trial_effect(const CompositeDataset& data, int stratum, const Contrast& contrast,
                                         const AnalysisOptions& options = {});

struct PooledConfig {
  DesignSpec tau_design;
  DesignSpec participation_design;
  TreatmentModelSpec treatment;
  AnalysisOptions options;
  // Trials pooled; empty means all.
  std::vector<int> collection;
};

// Trials containing both arms of the contrast.
std::vector<int> restrict_collection(const CompositeDataset& data, const Contrast& contrast);
// Throws TrialLacksArm naming every trial of `collection` missing an arm.
void require_arms(const CompositeDataset& data, const Contrast& contrast, const std::vector<int>& collection);
std::vector<int> resolve_collection(const CompositeDataset& data, const std::vector<int>& collection);

// Per-row transformed outcome (inverse-probability signed Y) over the
// collection's rows; zero elsewhere.
std::vector<double> build_transformed_outcome(const CompositeDataset& data, const Contrast& contrast,
                                              const TreatmentModelSpec& treatment,
                                              const std::vector<int>& collection = {});

struct TauModel {
  FittedGlm t_fit;
  DesignSpec design;
  std::vector<int> collection;
};

struct PhiTeResult {
  ContrastEstimate estimate;
  TauModel tau;
};

PhiTeResult estimate_phi_te(const CompositeDataset& data, const Contrast& contrast, const DesignSpec& tau_design,
                            const TreatmentModelSpec& treatment, const AnalysisOptions& options = {},
                            const std::vector<int>& collection = {});

ContrastEstimate estimate_phi_w(const CompositeDataset& data, const Contrast& contrast,
                                const DesignSpec& participation_design, const TreatmentModelSpec& treatment,
                                const AnalysisOptions& options = {}, const std::vector<int>& collection = {});

struct SweepFailure {
  int trial = 0;
  Estimator estimator = Estimator::psi_te;
  std::string code;
  std::string message;
};

struct SweepResult {
  // Sorted by trial, psi_te before psi_w.
  std::vector<ContrastEstimate> estimates;
  std::vector<SweepFailure> failures;
};

SweepResult per_trial_transport_sweep(const CompositeDataset& data, const Contrast& contrast,
                                      const SingleTrialConfig& config, std::size_t threads = 1);

}  // namespace tmeta
