#pragma once

#include "transport_meta/dataset.hpp"
#include "transport_meta/estimate.hpp"
#include "transport_meta/inference.hpp"
#include "transport_meta/transport.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tmeta {

struct FalsificationOptions {
  // Fit only trial rows whose covariates lie inside the target sample's
  // per-coordinate range.
  bool restrict_to_target_support = true;
};

struct FalsificationReport {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  std::vector<int> trials;
  std::vector<std::string> columns;
  // Per-trial transformed-outcome regression coefficients and their joint
  // sandwich covariance blocks.
  std::vector<Eigen::VectorXd> coefficients;
  std::vector<Eigen::MatrixXd> covariances;
  std::map<int, std::size_t> rows_used;
  bool restricted_support = true;
};

// Wald test that every trial's conditional mean difference (a linear model
// of the transformed outcome on a common design) is the same.
FalsificationReport falsification_test(const CompositeDataset& data, const Contrast& contrast,
                                       const DesignSpec& design, const TreatmentModelSpec& treatment,
                                       const FalsificationOptions& options = {},
                                       const std::vector<int>& collection = {});

struct HomogeneityReport {
  std::vector<int> trials;
  // Each trial's effect standardized to the target covariate distribution.
  std::vector<double> transported;
  std::vector<double> transported_se;
  // Each trial's effect standardized to its own covariate distribution.
  std::vector<double> self_standardized;
  std::vector<double> self_se;
  WaldTest transported_test;
  WaldTest classical_test;
  // Largest pairwise |difference| / SE(difference) among the
  // self-standardized effects.
  double classical_max_gap_se = 0.0;
  double transported_max_gap_se = 0.0;
};

HomogeneityReport homogeneity_of_transported(const CompositeDataset& data, const Contrast& contrast,
                                             const DesignSpec& outcome_design,
                                             const std::vector<int>& collection = {});

// Adds the target mean of u(s*; X) to a single-trial estimate; the variance
// comes from the estimating equations with the bias term included.
ContrastEstimate sensitivity_adjust(const ContrastEstimate& base, const CompositeDataset& data,
                                    const SingleTrialConfig& config, const BiasFunction& u);

std::vector<ContrastEstimate> sensitivity_sweep(const ContrastEstimate& base, const CompositeDataset& data,
                                                const SingleTrialConfig& config,
                                                const std::vector<BiasFunction>& grid);

struct ConstraintPair {
  int trial_a = 0;
  int trial_b = 0;
  double max_discrepancy = 0.0;
};

struct ConstraintReport {
  std::vector<int> trials;
  double max_discrepancy = 0.0;
  std::vector<ConstraintPair> pairs;
};

// Evaluates each trial's fitted conditional mean difference plus its bias
// function on the target rows and reports the largest cross-trial gap.
ConstraintReport pooled_bias_constraint_check(const CompositeDataset& data, const Contrast& contrast,
                                              const std::vector<BiasFunction>& u_set, const DesignSpec& design);

struct ProbabilitySummary {
  double min = 0.0;
  double q05 = 0.0;
  double median = 0.0;
  double q95 = 0.0;
  double max = 0.0;
  std::size_t below_01 = 0;
  std::size_t below_05 = 0;
};

ProbabilitySummary summarize_probabilities(std::vector<double> values);

struct TrialPositivity {
  int trial = 0;
  // Pr[S = s | X, S in {0, s}] at the target rows.
  std::optional<ProbabilitySummary> target_probabilities;
  // Pr[S = 0 | X] / Pr[S = s | X] at the trial's rows.
  double min_odds_weight = 0.0;
  double max_odds_weight = 0.0;
  bool flagged = false;
  std::optional<std::string> failure;
};

struct PositivityReport {
  std::vector<TrialPositivity> trials;
  // Pr[S in trials | X] at the target rows.
  std::optional<ProbabilitySummary> pooled;
  double pooled_min_odds_weight = 0.0;
  double pooled_max_odds_weight = 0.0;
  bool pooled_flagged = false;
  std::optional<std::string> pooled_failure;
};

inline constexpr double kPositivityFlag = 0.01;

PositivityReport positivity_report(const CompositeDataset& data, const DesignSpec& participation_design,
                                   const std::vector<int>& collection = {});

}  // namespace tmeta
