#pragma once

// Working-model pieces shared by the estimators: fitted probabilities and
// odds, evaluated at arbitrary stacked parameters so the target equations can
// be differentiated with respect to them.

#include "transport_meta/dataset.hpp"
#include "transport_meta/estimate.hpp"
#include "transport_meta/glm.hpp"
#include "transport_meta/inference.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tmeta::detail {

std::vector<std::size_t> select_rows(const CompositeDataset& data, const std::function<bool(std::size_t)>& keep);
std::vector<std::size_t> trial_rows(const CompositeDataset& data, const std::vector<int>& trials);
std::vector<std::size_t> trial_arm_rows(const CompositeDataset& data, int trial, int arm);

// Treatment code for a contrast label; InvalidContrast when unknown.
int arm_code(const CompositeDataset& data, const std::string& label);
int received_arm_code(const CompositeDataset& data, const std::string& label);

// Adds a GLM whose response does not depend on other parameters.
Eigen::Index add_glm_block(EstimatingStack& stack, const FittedGlm& fit, const std::string& name);

// Pr[category | row], either a multinomial fit over the categories observed
// on its fit rows or fixed known probabilities.
class CategoryProb {
 public:
  static CategoryProb estimated(FittedGlm fit);
  static CategoryProb known(std::map<int, double> probs);

  bool has_parameters() const noexcept { return fit_ && size() > 0; }
  Eigen::Index size() const noexcept { return fit_ ? fit_->dim() : 0; }
  Eigen::Index offset() const noexcept { return offset_; }
  const FittedGlm* fit() const noexcept { return fit_ ? &*fit_ : nullptr; }

  void attach(EstimatingStack& stack, const std::string& name);

  double prob(std::size_t i, int category) const { return prob(fitted_theta(), i, category); }
  double prob(const Eigen::VectorXd& theta, std::size_t i, int category) const;
  // d(1/prob)/d(own parameters).
  Eigen::RowVectorXd inv_prob_gradient(const Eigen::VectorXd& theta, std::size_t i, int category) const;

  // Stacked vector holding only this model's parameters at offset 0.
  const Eigen::VectorXd& fitted_theta() const noexcept { return local_theta_; }

 private:
  std::optional<FittedGlm> fit_;
  std::map<int, double> known_;
  Eigen::Index offset_ = 0;
  Eigen::VectorXd local_theta_;
  bool attached_ = false;

  Eigen::VectorXd own(const Eigen::VectorXd& theta) const;
};

// Per-trial treatment-assignment probabilities.
class TreatmentProbs {
 public:
  TreatmentProbs(const CompositeDataset& data, const std::vector<int>& trials, const TreatmentModelSpec& spec);

  double prob(const Eigen::VectorXd& theta, std::size_t i, int arm) const;
  double prob(std::size_t i, int arm) const;
  // d(1/prob)/d theta over the full stacked vector (length `width`).
  void add_inv_prob_gradient(const Eigen::VectorXd& theta, std::size_t i, int arm, double scale,
                             Eigen::Ref<Eigen::RowVectorXd> out) const;
  void attach(EstimatingStack& stack);

 private:
  const CompositeDataset* data_;
  std::map<int, CategoryProb> by_trial_;
};

// Participation odds Pr[S = 0 | X] / Pr[S in trials | X] from a binary logit
// on the target rows and the listed trials' rows, optionally capped.
class ParticipationOdds {
 public:
  ParticipationOdds(const CompositeDataset& data, const std::vector<int>& trials, const DesignSpec& design);

  // Caps odds above the given quantile of the contributing rows' odds.
  void truncate(double quantile, const std::vector<std::size_t>& contributing);
  std::optional<double> cap() const noexcept { return cap_; }
  std::size_t capped_count() const noexcept { return capped_count_; }

  double odds(std::size_t i) const;
  double odds(const Eigen::VectorXd& theta, std::size_t i) const;
  void add_gradient(const Eigen::VectorXd& theta, std::size_t i, double scale, Eigen::Ref<Eigen::RowVectorXd> out) const;
  void attach(EstimatingStack& stack, const std::string& name);

  const FittedGlm& fit() const noexcept { return fit_; }
  // ExtremeWeight warnings for contributing rows above `threshold`.
  std::vector<std::string> warnings(const std::vector<std::size_t>& contributing, double threshold) const;

 private:
  const CompositeDataset* data_;
  FittedGlm fit_;
  Eigen::Index offset_ = 0;
  bool attached_ = false;
  std::vector<char> capped_;
  std::optional<double> cap_;
  std::size_t capped_count_ = 0;
};

// Signed inverse treatment probability of the transformed outcome:
// 1/Pr[z] on arm z, -1/Pr[z'] on arm z', zero elsewhere.
double signed_inverse(const TreatmentProbs& probs, const CompositeDataset& data, const Eigen::VectorXd* theta,
                      std::size_t i, int z, int zp);
void add_signed_inverse_gradient(const TreatmentProbs& probs, const CompositeDataset& data,
                                 const Eigen::VectorXd& theta, std::size_t i, int z, int zp, double scale,
                                 Eigen::Ref<Eigen::RowVectorXd> out);

// Least-squares regression of the transformed outcome on `x` over `rows`,
// whose response moves with the treatment-model parameters. `data` and
// `probs` must outlive the stack.
Eigen::Index add_transformed_outcome_block(EstimatingStack& stack, const CompositeDataset& data,
                                           const TreatmentProbs& probs, std::shared_ptr<const Eigen::MatrixXd> x,
                                           std::vector<std::size_t> rows, const Eigen::VectorXd& beta, int z, int zp,
                                           const std::string& name);

// Finishes a contrast estimate from its stack: Wald interval from the
// variance of the last stacked parameter.
void finish_with_stack(ContrastEstimate& est, const EstimatingStack& stack, const AnalysisOptions& options);

void finish_point_only(ContrastEstimate& est, double level);

}  // namespace tmeta::detail
