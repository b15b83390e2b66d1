#include "transport_meta/estimate.hpp"

#include "transport_meta/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace tmeta {

std::string_view estimator_name(Estimator e) noexcept {
  switch (e) {
    case Estimator::psi_te: return "psi_te";
    case Estimator::psi_w: return "psi_w";
    case Estimator::phi_te: return "phi_te";
    case Estimator::phi_w: return "phi_w";
    case Estimator::pp_te: return "pp_te";
    case Estimator::pp_w: return "pp_w";
    case Estimator::unadjusted: return "unadjusted";
  }
  return "?";
}

Estimator estimator_from_name(std::string_view name) {
  for (auto e : {Estimator::psi_te, Estimator::psi_w, Estimator::phi_te, Estimator::phi_w, Estimator::pp_te,
                 Estimator::pp_w, Estimator::unadjusted})
    if (estimator_name(e) == name) return e;
  fail(Errc::config, "unknown estimator '" + std::string(name) + "'");
}

double normal_quantile_two_sided(double level) {
  if (!(level > 0.0 && level < 1.0)) fail(Errc::config, "confidence level must be in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 1.0 - (1.0 - level) / 2.0);
}

void set_wald_interval(ContrastEstimate& est, double variance, double level) {
  est.variance = std::max(variance, 0.0);
  est.level = level;
  const double half = normal_quantile_two_sided(level) * std::sqrt(est.variance);
  est.ci_lower = est.point - half;
  est.ci_upper = est.point + half;
}

void BiasFunction::validate(const CompositeDataset& data) const {
  if (form == Form::constant) return;
  const auto& names = data.covariate_names();
  for (const auto& [key, value] : coefficients) {
    (void)value;
    if (key == "intercept") continue;
    if (std::find(names.begin(), names.end(), key) == names.end())
      fail(Errc::unknown_term, "bias function coefficient '" + key + "' does not name a covariate");
  }
}

double BiasFunction::evaluate(const CompositeDataset& data, std::size_t row) const {
  if (form == Form::constant) return constant;
  const auto& names = data.covariate_names();
  double v = 0.0;
  for (const auto& [key, coef] : coefficients) {
    if (key == "intercept") {
      v += coef;
      continue;
    }
    auto it = std::find(names.begin(), names.end(), key);
    if (it == names.end()) fail(Errc::unknown_term, "bias function coefficient '" + key + "' is not a covariate");
    v += coef * data.covariates()(static_cast<Eigen::Index>(row), it - names.begin());
  }
  return v;
}

double BiasFunction::target_mean(const CompositeDataset& data) const {
  if (form == Form::constant) return constant;
  const auto target = data.view(StratumSelector::target());
  const auto& names = data.covariate_names();
  double v = 0.0;
  for (const auto& [key, coef] : coefficients) {
    if (key == "intercept") {
      v += coef;
      continue;
    }
    auto it = std::find(names.begin(), names.end(), key);
    if (it == names.end()) fail(Errc::unknown_term, "bias function coefficient '" + key + "' is not a covariate");
    double sum = 0.0;
    for (std::size_t i : target) sum += data.covariates()(static_cast<Eigen::Index>(i), it - names.begin());
    v += coef * (sum / static_cast<double>(target.size()));
  }
  return v;
}

}  // namespace tmeta
