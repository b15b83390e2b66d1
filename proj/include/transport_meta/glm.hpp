#pragma once

#include "transport_meta/dataset.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tmeta {

enum class Family { linear, binary_logit, multinomial_logit };

std::string_view family_name(Family f) noexcept;

// A main effect (one factor) or a pairwise interaction (two factors).
struct Term {
  std::vector<std::string> factors;
  std::string name() const;
};

struct DesignSpec {
  std::vector<Term> terms;
  bool intercept = true;
  // Adds I(S = s) columns for s = 2..m (trial 1 is the reference).
  bool trial_indicators = false;

  // "x1", "x1:x2" strings; throws DuplicateTerm.
  static DesignSpec parse(const std::vector<std::string>& terms, bool intercept = true);
  static DesignSpec intercept_only() { return {}; }
  std::vector<std::string> term_names() const;
};

// Design columns evaluated on every dataset row. Factors resolve against
// baseline covariates first, then post-assignment covariates.
struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> columns;
};

DesignMatrix build_design(const CompositeDataset& data, const DesignSpec& design);

// Response over dataset rows. Linear and binary families read `values`
// (binary: 0/1); the multinomial family reads `labels` with `categories`
// listing the category codes, reference first.
struct GlmResponse {
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<int> categories;

  static GlmResponse continuous(std::vector<double> v) { return {std::move(v), {}, {}}; }
  static GlmResponse categorical(std::vector<int> labels, std::vector<int> categories) {
    return {{}, std::move(labels), std::move(categories)};
  }
};

struct FittedGlm {
  Family family = Family::linear;
  // p x (K - 1); a single column for linear and binary fits.
  Eigen::MatrixXd beta;
  DesignSpec design;
  std::vector<std::string> columns;
  std::vector<std::size_t> fit_rows;
  // Category codes for logit families, reference first. Binary fits use {0, 1}.
  std::vector<int> categories;
  bool converged = false;
  int iterations = 0;

  std::shared_ptr<const Eigen::MatrixXd> x;
  std::shared_ptr<const GlmResponse> response;

  Eigen::Index dim() const noexcept { return beta.size(); }
  Eigen::VectorXd theta() const;

  // Linear predictor mean (inverse link applied) at dataset row i.
  double mean_at(std::size_t i) const;
  // Probability of category code `category` at dataset row i.
  double prob_at(std::size_t i, int category) const;
};

// Categorical probabilities of one design row: entry k is the probability of
// categories[k]. `beta` is p x (K - 1).
Eigen::VectorXd softmax_probs(const Eigen::Ref<const Eigen::RowVectorXd>& row, const Eigen::MatrixXd& beta);

inline double expit(double eta) {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

FittedGlm fit_glm(const CompositeDataset& data, RowIndices rows, const GlmResponse& response,
                  const DesignSpec& design, Family family);

// Same, on a prebuilt design matrix.
FittedGlm fit_glm(std::shared_ptr<const Eigen::MatrixXd> x, std::vector<std::string> columns,
                  RowIndices rows, std::shared_ptr<const GlmResponse> response, Family family,
                  const DesignSpec& design = {});

struct PredictTarget {
  enum class Kind { mean, prob };
  Kind kind = Kind::mean;
  int category = 0;
  static PredictTarget mean() { return {}; }
  static PredictTarget prob(int category) { return {Kind::prob, category}; }
};

// `x` holds the non-intercept design columns of one row.
double predict(const FittedGlm& model, std::span<const double> x, PredictTarget target);

struct ScoreContributions {
  Eigen::MatrixXd rows;     // n x dim, zero outside fit_rows
  Eigen::MatrixXd hessian;  // d(sum of scores)/d(beta) divided by n
};

ScoreContributions score_contributions(const FittedGlm& model, const CompositeDataset& data);

// Score machinery at arbitrary coefficients, for stacked estimating equations.
// `theta` is beta flattened column-major (category blocks contiguous).
Eigen::MatrixXd glm_score_rows(Family family, const Eigen::MatrixXd& x, const GlmResponse& response,
                               RowIndices rows, std::size_t n, std::size_t n_categories,
                               const Eigen::VectorXd& theta);
Eigen::MatrixXd glm_score_jacobian(Family family, const Eigen::MatrixXd& x, const GlmResponse& response,
                                   RowIndices rows, std::size_t n_categories, const Eigen::VectorXd& theta);

}  // namespace tmeta
