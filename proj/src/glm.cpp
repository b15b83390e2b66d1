#include "transport_meta/glm.hpp"

#include "transport_meta/error.hpp"
#include "transport_meta/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace tmeta {

namespace {

constexpr int kMaxIterations = 100;
constexpr double kTolerance = 1e-8;
constexpr double kSeparationProb = 1e-10;
constexpr double kExtremeProb = 1e-8;

std::string join_columns(const std::vector<std::string>& columns, const std::vector<Eigen::Index>& idx) {
  std::string out;
  for (auto j : idx) {
    if (!out.empty()) out += ", ";
    out += columns[static_cast<std::size_t>(j)];
  }
  return out;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, RowIndices rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

// Category index (position in the category list) of each listed row.
std::vector<int> category_index(Family family, const GlmResponse& response, RowIndices rows,
                                const std::vector<int>& categories) {
  std::vector<int> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    if (family == Family::binary_logit) {
      const double v = response.values[i];
      if (v != 0.0 && v != 1.0) fail(Errc::non_numeric_value, "binary response must be 0 or 1");
      out[r] = v == 1.0 ? 1 : 0;
    } else {
      auto it = std::find(categories.begin(), categories.end(), response.labels[i]);
      if (it == categories.end())
        fail(Errc::unknown_category, "response label " + std::to_string(response.labels[i]) +
                                         " not among the model categories");
      out[r] = static_cast<int>(it - categories.begin());
    }
  }
  return out;
}

Eigen::MatrixXd reshape(const Eigen::VectorXd& theta, Eigen::Index p) {
  const Eigen::Index k = p == 0 ? 0 : theta.size() / p;
  return Eigen::Map<const Eigen::MatrixXd>(theta.data(), p, k);
}

// Row-wise category probabilities, m x K.
Eigen::MatrixXd all_probs(const Eigen::MatrixXd& xf, const Eigen::MatrixXd& beta) {
  const Eigen::Index k1 = beta.cols();
  Eigen::MatrixXd eta = xf * beta;
  Eigen::MatrixXd probs(xf.rows(), k1 + 1);
  for (Eigen::Index i = 0; i < xf.rows(); ++i) {
    double top = 0.0;
    for (Eigen::Index k = 0; k < k1; ++k) top = std::max(top, eta(i, k));
    double denom = std::exp(-top);
    for (Eigen::Index k = 0; k < k1; ++k) denom += std::exp(eta(i, k) - top);
    probs(i, 0) = std::exp(-top) / denom;
    for (Eigen::Index k = 0; k < k1; ++k) probs(i, k + 1) = std::exp(eta(i, k) - top) / denom;
  }
  return probs;
}

double log_likelihood(const Eigen::MatrixXd& probs, const std::vector<int>& cat) {
  double ll = 0.0;
  for (std::size_t r = 0; r < cat.size(); ++r) ll += std::log(probs(static_cast<Eigen::Index>(r), cat[r]));
  return ll;
}

Eigen::VectorXd logit_score(const Eigen::MatrixXd& xf, const Eigen::MatrixXd& probs, const std::vector<int>& cat) {
  const Eigen::Index p = xf.cols();
  const Eigen::Index k1 = probs.cols() - 1;
  Eigen::VectorXd g(p * k1);
  for (Eigen::Index k = 0; k < k1; ++k) {
    Eigen::VectorXd resid(xf.rows());
    for (Eigen::Index i = 0; i < xf.rows(); ++i)
      resid(i) = (cat[static_cast<std::size_t>(i)] == k + 1 ? 1.0 : 0.0) - probs(i, k + 1);
    g.segment(k * p, p) = xf.transpose() * resid;
  }
  return g;
}

// Fisher information (negative Jacobian of the summed score).
Eigen::MatrixXd logit_information(const Eigen::MatrixXd& xf, const Eigen::MatrixXd& probs) {
  const Eigen::Index p = xf.cols();
  const Eigen::Index k1 = probs.cols() - 1;
  Eigen::MatrixXd info(p * k1, p * k1);
  for (Eigen::Index k = 0; k < k1; ++k) {
    for (Eigen::Index l = k; l < k1; ++l) {
      Eigen::VectorXd w(xf.rows());
      for (Eigen::Index i = 0; i < xf.rows(); ++i)
        w(i) = probs(i, k + 1) * ((k == l ? 1.0 : 0.0) - probs(i, l + 1));
      Eigen::MatrixXd block = xf.transpose() * w.asDiagonal() * xf;
      info.block(k * p, l * p, p, p) = block;
      info.block(l * p, k * p, p, p) = block.transpose();
    }
  }
  return info;
}

void check_rank(const Eigen::MatrixXd& xf, const std::vector<std::string>& columns) {
  const auto bad = linalg::deficient_columns(xf);
  if (!bad.empty())
    fail(Errc::singular, "design matrix is rank deficient (rows: " + std::to_string(xf.rows()) +
                             "); offending columns: " + join_columns(columns, bad));
}

}  // namespace

std::string_view family_name(Family f) noexcept {
  switch (f) {
    case Family::linear: return "linear";
    case Family::binary_logit: return "binary-logit";
    case Family::multinomial_logit: return "multinomial-logit";
  }
  return "?";
}

std::string Term::name() const {
  std::string out;
  for (const auto& f : factors) {
    if (!out.empty()) out += ":";
    out += f;
  }
  return out;
}

DesignSpec DesignSpec::parse(const std::vector<std::string>& terms, bool intercept) {
  DesignSpec spec;
  spec.intercept = intercept;
  std::set<std::string> seen;
  for (const auto& t : terms) {
    Term term;
    std::size_t start = 0;
    while (true) {
      const auto colon = t.find(':', start);
      term.factors.push_back(t.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    if (term.factors.size() > 2) fail(Errc::config, "only pairwise interactions are supported: '" + t + "'");
    for (const auto& f : term.factors)
      if (f.empty()) fail(Errc::config, "empty factor in term '" + t + "'");
    auto key = term.factors;
    std::sort(key.begin(), key.end());
    std::string canonical = key.size() == 2 ? key[0] + ":" + key[1] : key[0];
    if (!seen.insert(canonical).second) fail(Errc::duplicate_term, "duplicate design term '" + t + "'");
    spec.terms.push_back(std::move(term));
  }
  return spec;
}

std::vector<std::string> DesignSpec::term_names() const {
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.name());
  return out;
}

DesignMatrix build_design(const CompositeDataset& data, const DesignSpec& design) {
  const auto n = static_cast<Eigen::Index>(data.n());
  const auto& xn = data.covariate_names();
  const auto& ln = data.post_covariate_names();

  auto factor_column = [&](const std::string& name) -> Eigen::VectorXd {
    if (auto it = std::find(xn.begin(), xn.end(), name); it != xn.end())
      return data.covariates().col(it - xn.begin());
    if (auto it = std::find(ln.begin(), ln.end(), name); it != ln.end())
      return data.post_covariates().col(it - ln.begin());
    fail(Errc::unknown_term, "design term '" + name + "' does not name a covariate");
  };

  std::vector<Eigen::VectorXd> cols;
  DesignMatrix out;
  if (design.intercept) {
    cols.push_back(Eigen::VectorXd::Ones(n));
    out.columns.push_back("(intercept)");
  }
  for (const auto& term : design.terms) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    for (const auto& f : term.factors) v = v.cwiseProduct(factor_column(f));
    cols.push_back(std::move(v));
    out.columns.push_back(term.name());
  }
  if (design.trial_indicators) {
    for (int s = 2; s <= data.m(); ++s) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = data.stratum(static_cast<std::size_t>(i)) == s ? 1.0 : 0.0;
      cols.push_back(std::move(v));
      out.columns.push_back("S[" + std::to_string(s) + "]");
    }
  }
  out.values.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.values.col(static_cast<Eigen::Index>(j)) = cols[j];
  return out;
}

Eigen::VectorXd FittedGlm::theta() const {
  return Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
}

Eigen::VectorXd softmax_probs(const Eigen::Ref<const Eigen::RowVectorXd>& row, const Eigen::MatrixXd& beta) {
  Eigen::MatrixXd xf = row;
  return all_probs(xf, beta).row(0).transpose();
}

double FittedGlm::mean_at(std::size_t i) const {
  const double eta = x->row(static_cast<Eigen::Index>(i)).dot(beta.col(0));
  return family == Family::linear ? eta : expit(eta);
}

double FittedGlm::prob_at(std::size_t i, int category) const {
  auto it = std::find(categories.begin(), categories.end(), category);
  if (it == categories.end()) fail(Errc::unknown_category, "unknown category " + std::to_string(category));
  if (family == Family::linear) fail(Errc::unknown_category, "linear model has no categories");
  if (categories.size() == 1) return 1.0;
  const Eigen::VectorXd probs = softmax_probs(x->row(static_cast<Eigen::Index>(i)), beta);
  return probs(it - categories.begin());
}

FittedGlm fit_glm(std::shared_ptr<const Eigen::MatrixXd> x, std::vector<std::string> columns, RowIndices rows,
                  std::shared_ptr<const GlmResponse> response, Family family, const DesignSpec& design) {
  FittedGlm fit;
  fit.family = family;
  fit.design = design;
  fit.columns = std::move(columns);
  fit.fit_rows.assign(rows.begin(), rows.end());
  fit.x = x;
  fit.response = response;
  const Eigen::Index p = x->cols();

  const Eigen::MatrixXd xf = rows_of(*x, rows);

  if (family == Family::linear) {
    check_rank(xf, fit.columns);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) y(static_cast<Eigen::Index>(r)) = response->values[rows[r]];
    fit.beta = linalg::least_squares(xf, y);
    fit.converged = true;
    fit.iterations = 1;
    return fit;
  }

  fit.categories = family == Family::binary_logit ? std::vector<int>{0, 1} : response->categories;
  const auto k_count = fit.categories.size();
  if (k_count == 0) fail(Errc::unknown_category, "no response categories");
  const std::vector<int> cat = category_index(family, *response, rows, fit.categories);
  if (k_count == 1) {
    fit.beta.resize(p, 0);
    fit.converged = true;
    return fit;
  }

  std::vector<double> counts(k_count, 0.0);
  for (int c : cat) counts[static_cast<std::size_t>(c)] += 1.0;
  for (std::size_t k = 0; k < k_count; ++k)
    if (counts[k] == 0.0)
      fail(Errc::separation, "response category " + std::to_string(fit.categories[k]) + " has no fit rows");
  check_rank(xf, fit.columns);

  const auto k1 = static_cast<Eigen::Index>(k_count - 1);
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, k1);
  if (design.intercept && p > 0 && fit.columns.front() == "(intercept)")
    for (Eigen::Index k = 0; k < k1; ++k) beta(0, k) = std::log(counts[static_cast<std::size_t>(k + 1)] / counts[0]);

  Eigen::MatrixXd probs = all_probs(xf, beta);
  double ll = log_likelihood(probs, cat);
  for (int iter = 1; iter <= kMaxIterations; ++iter) {
    fit.iterations = iter;
    const Eigen::VectorXd g = logit_score(xf, probs, cat);
    // Under separation the score vanishes as fitted probabilities run off to
    // 0 or 1, so a small score alone does not mean convergence there.
    if (g.lpNorm<Eigen::Infinity>() < kTolerance && probs.minCoeff() >= kExtremeProb) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step;
    if (!linalg::solve_spd(logit_information(xf, probs), g, step))
      fail(Errc::separation, "information matrix lost definiteness (quasi-complete separation)");

    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
    double t = 1.0;
    Eigen::MatrixXd next, next_probs;
    double next_ll = 0.0;
    for (int halving = 0; halving < 30; ++halving) {
      next = reshape(flat + t * step, p);
      next_probs = all_probs(xf, next);
      next_ll = log_likelihood(next_probs, cat);
      if (std::isfinite(next_ll) && next_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) break;
      t *= 0.5;
    }
    const double change = (t * step).lpNorm<Eigen::Infinity>();
    const bool growing = next.norm() > beta.norm();
    beta = next;
    probs = next_probs;
    ll = next_ll;
    if (probs.minCoeff() < kSeparationProb && growing)
      fail(Errc::separation, "fitted probabilities approach 0 or 1 with diverging coefficients (separation)");
    if (change < kTolerance) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    fail(Errc::not_converged, "logistic fit did not converge in " + std::to_string(kMaxIterations) + " iterations");

  // One more full Newton step: near the optimum it takes the residual error
  // to rounding level.
  {
    const Eigen::VectorXd g = logit_score(xf, probs, cat);
    Eigen::VectorXd step;
    if (linalg::solve_spd(logit_information(xf, probs), g, step)) {
      const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
      const Eigen::MatrixXd next = reshape(flat + step, p);
      const Eigen::MatrixXd next_probs = all_probs(xf, next);
      const double next_ll = log_likelihood(next_probs, cat);
      if (std::isfinite(next_ll) && next_ll >= ll - 1e-12 * (1.0 + std::abs(ll)) &&
          logit_score(xf, next_probs, cat).lpNorm<Eigen::Infinity>() <= g.lpNorm<Eigen::Infinity>())
        beta = next;
    }
  }
  fit.beta = beta;
  return fit;
}

FittedGlm fit_glm(const CompositeDataset& data, RowIndices rows, const GlmResponse& response,
                  const DesignSpec& design, Family family) {
  DesignMatrix dm = build_design(data, design);
  auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
  return fit_glm(x, std::move(dm.columns), rows, std::make_shared<const GlmResponse>(response), family, design);
}

double predict(const FittedGlm& model, std::span<const double> x, PredictTarget target) {
  const Eigen::Index p = model.beta.rows();
  const Eigen::Index offset = model.design.intercept ? 1 : 0;
  if (static_cast<Eigen::Index>(x.size()) + offset != p)
    fail(Errc::dimension_mismatch, "predict: expected " + std::to_string(p - offset) + " covariate values, got " +
                                       std::to_string(x.size()));
  Eigen::RowVectorXd row(p);
  if (offset) row(0) = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j) row(static_cast<Eigen::Index>(j) + offset) = x[j];

  if (model.family == Family::linear) {
    if (target.kind != PredictTarget::Kind::mean) fail(Errc::unknown_category, "linear model has no categories");
    return row.dot(model.beta.col(0));
  }
  if (model.family == Family::binary_logit && target.kind == PredictTarget::Kind::mean)
    return expit(row.dot(model.beta.col(0)));
  if (target.kind == PredictTarget::Kind::mean)
    fail(Errc::unknown_category, "multinomial prediction needs a category");
  auto it = std::find(model.categories.begin(), model.categories.end(), target.category);
  if (it == model.categories.end())
    fail(Errc::unknown_category, "unknown category " + std::to_string(target.category));
  if (model.categories.size() == 1) return 1.0;
  return softmax_probs(row, model.beta)(it - model.categories.begin());
}

Eigen::MatrixXd glm_score_rows(Family family, const Eigen::MatrixXd& x, const GlmResponse& response, RowIndices rows,
                               std::size_t n, std::size_t n_categories, const Eigen::VectorXd& theta) {
  (void)n_categories;
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), theta.size());
  if (theta.size() == 0) return out;
  if (family == Family::linear) {
    for (std::size_t i : rows) {
      const auto ei = static_cast<Eigen::Index>(i);
      const double resid = response.values[i] - x.row(ei).dot(theta);
      out.row(ei) = resid * x.row(ei);
    }
    return out;
  }
  std::vector<int> categories =
      family == Family::binary_logit ? std::vector<int>{0, 1} : response.categories;
  const std::vector<int> cat = category_index(family, response, rows, categories);
  const Eigen::MatrixXd beta = reshape(theta, p);
  const Eigen::MatrixXd probs = all_probs(rows_of(x, rows), beta);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto ei = static_cast<Eigen::Index>(rows[r]);
    for (Eigen::Index k = 0; k < beta.cols(); ++k) {
      const double resid = (cat[r] == k + 1 ? 1.0 : 0.0) - probs(static_cast<Eigen::Index>(r), k + 1);
      out.block(ei, k * p, 1, p) = resid * x.row(ei);
    }
  }
  return out;
}

Eigen::MatrixXd glm_score_jacobian(Family family, const Eigen::MatrixXd& x, const GlmResponse& response,
                                   RowIndices rows, std::size_t n_categories, const Eigen::VectorXd& theta) {
  (void)response;
  (void)n_categories;
  const Eigen::Index p = x.cols();
  if (theta.size() == 0) return Eigen::MatrixXd::Zero(0, 0);
  const Eigen::MatrixXd xf = rows_of(x, rows);
  if (family == Family::linear) return -(xf.transpose() * xf);
  return -logit_information(xf, all_probs(xf, reshape(theta, p)));
}

ScoreContributions score_contributions(const FittedGlm& model, const CompositeDataset& data) {
  ScoreContributions out;
  const std::size_t k = model.family == Family::linear ? 1 : model.categories.size();
  out.rows = glm_score_rows(model.family, *model.x, *model.response, model.fit_rows, data.n(), k, model.theta());
  out.hessian = glm_score_jacobian(model.family, *model.x, *model.response, model.fit_rows, k, model.theta()) /
                static_cast<double>(data.n());
  return out;
}

}  // namespace tmeta
