#pragma once

#include "transport_meta/dataset.hpp"
#include "transport_meta/glm.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tmeta {

class EstimatingStack;

enum class Estimator { psi_te, psi_w, phi_te, phi_w, pp_te, pp_w, unadjusted };

std::string_view estimator_name(Estimator e) noexcept;
Estimator estimator_from_name(std::string_view name);

struct Contrast {
  std::string z;
  std::string z_prime;
};

struct BootstrapSummary {
  std::size_t requested = 0;
  std::size_t effective = 0;
  std::size_t failed = 0;
  std::uint64_t seed = 0;
  bool stratified = true;
  double variance = 0.0;
  double wald_lower = 0.0;
  double wald_upper = 0.0;
  double percentile_lower = 0.0;
  double percentile_upper = 0.0;
};

struct ContrastEstimate {
  Estimator estimator = Estimator::psi_te;
  std::string z;
  std::string z_prime;
  // Per-protocol contrasts also name the received treatments.
  std::optional<std::string> a;
  std::optional<std::string> a_prime;
  // Trial id, "pooled", or "target" (benchmark analysis of S = 0).
  std::string source;
  double point = 0.0;
  double variance = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double level = 0.95;
  std::string variance_method = "sandwich";
  std::map<std::string, std::size_t> n_used;
  std::optional<BootstrapSummary> bootstrap;
  // Sensitivity analyses: the target-sample mean of the bias function.
  std::optional<double> bias_adjustment;
  std::vector<std::string> warnings;
};

// z quantile for a two-sided interval at `level`.
double normal_quantile_two_sided(double level);
void set_wald_interval(ContrastEstimate& est, double variance, double level);

// Treatment-assignment probabilities Pr[Z = z | X, S] for trial rows.
struct TreatmentModelSpec {
  enum class Mode { estimated, known };
  Mode mode = Mode::estimated;
  // Design of the per-trial assignment model (estimated mode).
  DesignSpec design;
  // Known mode: probabilities by arm label, optionally overridden per trial.
  std::map<std::string, double> known;
  std::map<int, std::map<std::string, double>> known_by_trial;
};

struct WeightOptions {
  // Odds above this quantile (over contributing rows) are capped. Off by default.
  std::optional<double> truncate_odds_quantile;
  // Odds above this value produce an ExtremeWeight warning record.
  double extreme_odds_warning = 100.0;
};

struct AnalysisOptions {
  double level = 0.95;
  // Off for point-only runs (bootstrap replicates).
  bool sandwich = true;
  WeightOptions weights;
  // Called with the assembled estimating-equation stack before the variance
  // is computed.
  std::function<void(const EstimatingStack&)> inspect_stack;
};

struct OutcomeModelSpec {
  DesignSpec design;
  Family family = Family::linear;
};

// User-specified bias function u(s; X) for sensitivity analysis.
struct BiasFunction {
  enum class Form { constant, linear };
  int trial = 1;
  Form form = Form::constant;
  double constant = 0.0;
  // Linear form: "intercept" plus covariate-name keys.
  std::map<std::string, double> coefficients;

  static BiasFunction constant_shift(int trial, double c) { return {trial, Form::constant, c, {}}; }

  double evaluate(const CompositeDataset& data, std::size_t row) const;
  // Mean over target rows; exactly `constant` for the constant form.
  double target_mean(const CompositeDataset& data) const;
  void validate(const CompositeDataset& data) const;
};

}  // namespace tmeta
