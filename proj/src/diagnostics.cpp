#include "transport_meta/diagnostics.hpp"

#include "model_blocks.hpp"
#include "transport_meta/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <memory>

namespace tmeta {

using detail::arm_code;
using detail::trial_arm_rows;

FalsificationReport falsification_test(const CompositeDataset& data, const Contrast& contrast,
                                       const DesignSpec& design, const TreatmentModelSpec& treatment,
                                       const FalsificationOptions& options, const std::vector<int>& collection) {
  const auto trials = resolve_collection(data, collection);
  if (trials.size() < 2) fail(Errc::insufficient_trials, "falsification test needs at least two trials");
  require_arms(data, contrast, trials);
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  detail::TreatmentProbs probs(data, trials, treatment);

  const Eigen::MatrixXd& cov = data.covariates();
  const auto target = data.view(StratumSelector::target());
  Eigen::RowVectorXd lo = Eigen::RowVectorXd::Constant(cov.cols(), std::numeric_limits<double>::infinity());
  Eigen::RowVectorXd hi = -lo;
  for (std::size_t i : target) {
    lo = lo.cwiseMin(cov.row(static_cast<Eigen::Index>(i)));
    hi = hi.cwiseMax(cov.row(static_cast<Eigen::Index>(i)));
  }
  auto inside = [&](std::size_t i) {
    const auto row = cov.row(static_cast<Eigen::Index>(i));
    return (row.array() >= lo.array()).all() && (row.array() <= hi.array()).all();
  };

  DesignMatrix dm = build_design(data, design);
  auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
  std::vector<double> u(data.n(), 0.0);
  for (std::size_t i : detail::trial_rows(data, trials))
    u[i] = detail::signed_inverse(probs, data, nullptr, i, z, zp) * data.outcome(i);
  auto response = std::make_shared<const GlmResponse>(GlmResponse::continuous(std::move(u)));

  FalsificationReport report;
  report.trials = trials;
  report.columns = dm.columns;
  report.restricted_support = options.restrict_to_target_support;

  std::vector<FittedGlm> fits;
  std::vector<std::vector<std::size_t>> rows_by_trial;
  for (int s : trials) {
    auto rows = detail::select_rows(data, [&](std::size_t i) {
      return data.stratum(i) == s && (!options.restrict_to_target_support || inside(i));
    });
    report.rows_used[s] = rows.size();
    fits.push_back(fit_glm(x, dm.columns, rows, response, Family::linear, design));
    rows_by_trial.push_back(std::move(rows));
  }

  EstimatingStack stack(data.n());
  probs.attach(stack);
  std::vector<Eigen::Index> offsets;
  for (std::size_t k = 0; k < trials.size(); ++k)
    offsets.push_back(detail::add_transformed_outcome_block(stack, data, probs, x, rows_by_trial[k], fits[k].theta(),
                                                            z, zp, "tau[" + std::to_string(trials[k]) + "]"));
  const Eigen::MatrixXd v = stack.covariance();

  const Eigen::Index p = x->cols();
  const auto m = static_cast<Eigen::Index>(trials.size());
  Eigen::VectorXd beta(m * p);
  Eigen::MatrixXd vb(m * p, m * p);
  for (Eigen::Index a = 0; a < m; ++a) {
    beta.segment(a * p, p) = fits[static_cast<std::size_t>(a)].theta();
    for (Eigen::Index b = 0; b < m; ++b)
      vb.block(a * p, b * p, p, p) = v.block(offsets[static_cast<std::size_t>(a)], offsets[static_cast<std::size_t>(b)], p, p);
    report.coefficients.push_back(fits[static_cast<std::size_t>(a)].theta());
    report.covariances.push_back(vb.block(a * p, a * p, p, p));
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero((m - 1) * p, m * p);
  for (Eigen::Index s = 1; s < m; ++s)
    for (Eigen::Index k = 0; k < p; ++k) {
      c((s - 1) * p + k, k) = 1.0;
      c((s - 1) * p + k, s * p + k) = -1.0;
    }
  const WaldTest w = wald_test(beta, vb, c);
  report.statistic = w.statistic;
  report.df = w.df;
  report.p_value = w.p_value;
  return report;
}

HomogeneityReport homogeneity_of_transported(const CompositeDataset& data, const Contrast& contrast,
                                             const DesignSpec& outcome_design, const std::vector<int>& collection) {
  const auto trials = resolve_collection(data, collection);
  if (trials.size() < 2) fail(Errc::insufficient_trials, "homogeneity test needs at least two trials");
  require_arms(data, contrast, trials);
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);

  DesignMatrix dm = build_design(data, outcome_design);
  auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
  std::vector<double> y(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) y[i] = data.outcome(i);
  auto resp = std::make_shared<const GlmResponse>(GlmResponse::continuous(std::move(y)));
  const Eigen::Index p = x->cols();
  const auto target = data.view(StratumSelector::target());
  const std::vector<std::size_t> target_rows(target.begin(), target.end());
  Eigen::RowVectorXd target_sum = Eigen::RowVectorXd::Zero(p);
  for (std::size_t i : target_rows) target_sum += x->row(static_cast<Eigen::Index>(i));
  const auto n0 = static_cast<double>(target_rows.size());

  HomogeneityReport report;
  report.trials = trials;
  EstimatingStack stack(data.n());
  std::vector<Eigen::Index> transported_at, self_at;
  for (int s : trials) {
    const FittedGlm hz = fit_glm(x, dm.columns, trial_arm_rows(data, s, z), resp, Family::linear, outcome_design);
    const FittedGlm hzp = fit_glm(x, dm.columns, trial_arm_rows(data, s, zp), resp, Family::linear, outcome_design);
    const Eigen::Index off_z = detail::add_glm_block(stack, hz, "outcome[z," + std::to_string(s) + "]");
    const Eigen::Index off_zp = detail::add_glm_block(stack, hzp, "outcome[z'," + std::to_string(s) + "]");
    const Eigen::VectorXd d = hz.theta() - hzp.theta();

    const auto own = data.view(StratumSelector::of_trial(s));
    const std::vector<std::size_t> own_rows(own.begin(), own.end());
    Eigen::RowVectorXd own_sum = Eigen::RowVectorXd::Zero(p);
    for (std::size_t i : own_rows) own_sum += x->row(static_cast<Eigen::Index>(i));

    // Standardized to rows `rows` (target or the trial itself).
    auto add_standardized = [&](const std::vector<std::size_t>& rows, const Eigen::RowVectorXd& xsum,
                                const std::string& name) {
      const Eigen::Index off = stack.dim();
      const auto count = static_cast<double>(rows.size());
      Eigen::VectorXd start(1);
      start << xsum.dot(d) / count;
      stack.add_block(
          name, start,
          [=, n = data.n()](const Eigen::VectorXd& theta) {
            Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 1);
            const Eigen::VectorXd dd = theta.segment(off_z, p) - theta.segment(off_zp, p);
            for (std::size_t i : rows)
              r(static_cast<Eigen::Index>(i), 0) = x->row(static_cast<Eigen::Index>(i)).dot(dd) - theta(off);
            return r;
          },
          [=](const Eigen::VectorXd&) {
            Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, off + 1);
            j.block(0, off_z, 1, p) = xsum;
            j.block(0, off_zp, 1, p) -= xsum;
            j(0, off) = -count;
            return j;
          });
      return off;
    };
    transported_at.push_back(add_standardized(target_rows, target_sum, "transported[" + std::to_string(s) + "]"));
    self_at.push_back(add_standardized(own_rows, own_sum, "self[" + std::to_string(s) + "]"));
    (void)n0;
  }

  const Eigen::MatrixXd v = stack.covariance();
  const auto m = static_cast<Eigen::Index>(trials.size());
  auto collect = [&](const std::vector<Eigen::Index>& at, std::vector<double>& point, std::vector<double>& se,
                     WaldTest& test, double& max_gap) {
    Eigen::VectorXd est(m);
    Eigen::MatrixXd cov(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      est(a) = stack.theta()(at[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < m; ++b)
        cov(a, b) = v(at[static_cast<std::size_t>(a)], at[static_cast<std::size_t>(b)]);
      point.push_back(est(a));
      se.push_back(std::sqrt(std::max(0.0, cov(a, a))));
    }
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m - 1, m);
    for (Eigen::Index s = 1; s < m; ++s) {
      c(s - 1, 0) = 1.0;
      c(s - 1, s) = -1.0;
    }
    test = wald_test(est, cov, c);
    max_gap = 0.0;
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = a + 1; b < m; ++b) {
        const double var = cov(a, a) + cov(b, b) - 2.0 * cov(a, b);
        const double gap = std::abs(est(a) - est(b));
        if (gap == 0.0) continue;
        max_gap = std::max(max_gap, var > 0.0 ? gap / std::sqrt(var) : std::numeric_limits<double>::infinity());
      }
  };
  collect(transported_at, report.transported, report.transported_se, report.transported_test,
          report.transported_max_gap_se);
  collect(self_at, report.self_standardized, report.self_se, report.classical_test, report.classical_max_gap_se);
  return report;
}

ContrastEstimate sensitivity_adjust(const ContrastEstimate& base, const CompositeDataset& data,
                                    const SingleTrialConfig& config, const BiasFunction& u) {
  if (base.estimator != Estimator::psi_te && base.estimator != Estimator::psi_w)
    fail(Errc::config, "sensitivity analysis applies to single-trial transport estimates");
  int trial = 0;
  const auto* first = base.source.data();
  const auto* last = first + base.source.size();
  if (std::from_chars(first, last, trial).ptr != last)
    fail(Errc::trial_mismatch, "base estimate source '" + base.source + "' is not a trial");
  if (u.trial != trial)
    fail(Errc::trial_mismatch, "bias function is for trial " + std::to_string(u.trial) + ", base estimate for trial " +
                                   std::to_string(trial));
  const Contrast c{base.z, base.z_prime};
  ContrastEstimate adj =
      base.estimator == Estimator::psi_te
          ? estimate_psi_te(data, trial, c, config.outcome_design, config.options, &u).estimate
          : estimate_psi_w(data, trial, c, config.participation_design, config.treatment, config.options, &u);
  adj.bias_adjustment = u.target_mean(data);
  adj.point = base.point + *adj.bias_adjustment;
  if (adj.variance_method == "sandwich")
    set_wald_interval(adj, adj.variance, adj.level);
  else
    detail::finish_point_only(adj, adj.level);
  return adj;
}

std::vector<ContrastEstimate> sensitivity_sweep(const ContrastEstimate& base, const CompositeDataset& data,
                                                const SingleTrialConfig& config,
                                                const std::vector<BiasFunction>& grid) {
  std::vector<ContrastEstimate> out;
  out.reserve(grid.size());
  for (const auto& u : grid) out.push_back(sensitivity_adjust(base, data, config, u));
  return out;
}

ConstraintReport pooled_bias_constraint_check(const CompositeDataset& data, const Contrast& contrast,
                                              const std::vector<BiasFunction>& u_set, const DesignSpec& design) {
  const auto trials = data.trials();
  std::map<int, const BiasFunction*> by_trial;
  for (const auto& u : u_set) {
    if (u.trial < 1 || u.trial > data.m())
      fail(Errc::trial_mismatch, "bias function names unknown trial " + std::to_string(u.trial));
    if (!by_trial.emplace(u.trial, &u).second)
      fail(Errc::trial_mismatch, "two bias functions for trial " + std::to_string(u.trial));
  }
  for (int s : trials)
    if (!by_trial.count(s)) fail(Errc::trial_mismatch, "no bias function for trial " + std::to_string(s));

  require_arms(data, contrast, trials);
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  DesignMatrix dm = build_design(data, design);
  auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
  std::vector<double> y(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) y[i] = data.outcome(i);
  auto resp = std::make_shared<const GlmResponse>(GlmResponse::continuous(std::move(y)));
  const auto target = data.view(StratumSelector::target());

  std::vector<Eigen::VectorXd> values;
  for (int s : trials) {
    const auto* u = by_trial.at(s);
    u->validate(data);
    const FittedGlm hz = fit_glm(x, dm.columns, trial_arm_rows(data, s, z), resp, Family::linear, design);
    const FittedGlm hzp = fit_glm(x, dm.columns, trial_arm_rows(data, s, zp), resp, Family::linear, design);
    const Eigen::VectorXd d = hz.theta() - hzp.theta();
    Eigen::VectorXd v(static_cast<Eigen::Index>(target.size()));
    for (std::size_t r = 0; r < target.size(); ++r)
      v(static_cast<Eigen::Index>(r)) = x->row(static_cast<Eigen::Index>(target[r])).dot(d) + u->evaluate(data, target[r]);
    values.push_back(std::move(v));
  }

  ConstraintReport report;
  report.trials = trials;
  for (std::size_t a = 0; a < trials.size(); ++a)
    for (std::size_t b = a + 1; b < trials.size(); ++b) {
      const double gap = (values[a] - values[b]).cwiseAbs().maxCoeff();
      report.pairs.push_back({trials[a], trials[b], gap});
      report.max_discrepancy = std::max(report.max_discrepancy, gap);
    }
  return report;
}

ProbabilitySummary summarize_probabilities(std::vector<double> values) {
  ProbabilitySummary out;
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  out.min = values.front();
  out.max = values.back();
  out.q05 = sorted_quantile(values, 0.05);
  out.median = sorted_quantile(values, 0.5);
  out.q95 = sorted_quantile(values, 0.95);
  for (double v : values) {
    if (v < 0.01) ++out.below_01;
    if (v < 0.05) ++out.below_05;
  }
  return out;
}

namespace {

// Binary logit of membership in `strata` among rows of {0} and `strata`.
FittedGlm membership_fit(const CompositeDataset& data, const std::vector<int>& strata, const DesignSpec& design) {
  std::vector<char> in(static_cast<std::size_t>(data.m()) + 1, 0);
  for (int s : strata) in[static_cast<std::size_t>(s)] = 1;
  const auto rows = detail::select_rows(
      data, [&](std::size_t i) { return data.stratum(i) == 0 || in[static_cast<std::size_t>(data.stratum(i))]; });
  std::vector<double> y(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) y[i] = data.stratum(i) > 0 && in[static_cast<std::size_t>(data.stratum(i))] ? 1.0 : 0.0;
  return fit_glm(data, rows, GlmResponse::continuous(std::move(y)), design, Family::binary_logit);
}

void odds_range(const FittedGlm& fit, const std::vector<std::size_t>& rows, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = 0.0;
  for (std::size_t i : rows) {
    const double p = fit.mean_at(i);
    const double w = (1.0 - p) / p;
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  if (rows.empty()) lo = 0.0;
}

}  // namespace

PositivityReport positivity_report(const CompositeDataset& data, const DesignSpec& participation_design,
                                   const std::vector<int>& collection) {
  const auto trials = resolve_collection(data, collection);
  const auto target = data.view(StratumSelector::target());
  PositivityReport report;
  for (int s : trials) {
    TrialPositivity tp;
    tp.trial = s;
    try {
      const FittedGlm fit = membership_fit(data, {s}, participation_design);
      std::vector<double> probs;
      for (std::size_t i : target) probs.push_back(fit.mean_at(i));
      tp.target_probabilities = summarize_probabilities(std::move(probs));
      tp.flagged = tp.target_probabilities->below_01 > 0;
      const auto own = data.view(StratumSelector::of_trial(s));
      odds_range(fit, std::vector<std::size_t>(own.begin(), own.end()), tp.min_odds_weight, tp.max_odds_weight);
    } catch (const Error& e) {
      tp.flagged = true;
      tp.failure = std::string(errc_name(e.code())) + ": " + e.what();
    }
    report.trials.push_back(std::move(tp));
  }
  try {
    const FittedGlm fit = membership_fit(data, trials, participation_design);
    std::vector<double> probs;
    for (std::size_t i : target) probs.push_back(fit.mean_at(i));
    report.pooled = summarize_probabilities(std::move(probs));
    report.pooled_flagged = report.pooled->below_01 > 0;
    odds_range(fit, detail::trial_rows(data, trials), report.pooled_min_odds_weight, report.pooled_max_odds_weight);
  } catch (const Error& e) {
    report.pooled_flagged = true;
    report.pooled_failure = std::string(errc_name(e.code())) + ": " + e.what();
  }
  return report;
}

}  // namespace tmeta
