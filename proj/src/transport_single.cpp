#include "transport_meta/transport.hpp"

#include "model_blocks.hpp"
#include "transport_meta/error.hpp"
#include "transport_meta/inference.hpp"

#include <memory>

namespace tmeta {

using detail::arm_code;
using detail::trial_arm_rows;

DesignSpec main_effects(const CompositeDataset& data) { return DesignSpec::parse(data.covariate_names()); }

namespace {

std::vector<double> outcome_values(const CompositeDataset& data) {
  std::vector<double> y(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) y[i] = data.outcome(i);
  return y;
}

std::vector<double> bias_values(const CompositeDataset& data, const BiasFunction* bias) {
  std::vector<double> u(data.n(), 0.0);
  if (!bias) return u;
  bias->validate(data);
  for (std::size_t i : data.view(StratumSelector::target())) u[i] = bias->evaluate(data, i);
  return u;
}

ContrastEstimate blank(Estimator e, const Contrast& c, std::string source) {
  ContrastEstimate est;
  est.estimator = e;
  est.z = c.z;
  est.z_prime = c.z_prime;
  est.source = std::move(source);
  return est;
}

void require_arm(const std::vector<std::size_t>& rows, const std::string& label, int trial) {
  if (rows.empty())
    fail(Errc::arm_missing, "trial " + std::to_string(trial) + " has no rows assigned to '" + label + "'");
}

}  // namespace

PsiTeResult estimate_psi_te(const CompositeDataset& data, int trial, const Contrast& contrast,
                            const DesignSpec& outcome_design, const AnalysisOptions& options,
                            const BiasFunction* bias) {
  const auto trial_view = data.view(StratumSelector::of_trial(trial));
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  const auto rows_z = trial_arm_rows(data, trial, z);
  const auto rows_zp = trial_arm_rows(data, trial, zp);
  require_arm(rows_z, contrast.z, trial);
  require_arm(rows_zp, contrast.z_prime, trial);

  DesignMatrix dm = build_design(data, outcome_design);
  auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
  auto y = std::make_shared<const GlmResponse>(GlmResponse::continuous(outcome_values(data)));

  PsiTeResult out;
  out.cate.h_z = fit_glm(x, dm.columns, rows_z, y, Family::linear, outcome_design);
  out.cate.h_zprime = fit_glm(x, dm.columns, rows_zp, y, Family::linear, outcome_design);

  const auto target = data.view(StratumSelector::target());
  const auto n0 = static_cast<double>(target.size());
  const Eigen::VectorXd diff_beta = out.cate.h_z.theta() - out.cate.h_zprime.theta();
  double sum = 0.0;
  for (std::size_t i : target) sum += x->row(static_cast<Eigen::Index>(i)).dot(diff_beta);

  ContrastEstimate& est = out.estimate;
  est = blank(Estimator::psi_te, contrast, std::to_string(trial));
  est.point = sum / n0;
  if (bias) {
    est.bias_adjustment = bias->target_mean(data);
    est.point += *est.bias_adjustment;
  }
  est.n_used = {{"target", target.size()},
                {"trial", trial_view.size()},
                {"arm_z", rows_z.size()},
                {"arm_zprime", rows_zp.size()}};

  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return out;
  }

  EstimatingStack stack(data.n());
  const Eigen::Index off_z = detail::add_glm_block(stack, out.cate.h_z, "outcome[z]");
  const Eigen::Index off_zp = detail::add_glm_block(stack, out.cate.h_zprime, "outcome[z']");
  const Eigen::Index p = x->cols();
  const Eigen::Index off_t = stack.dim();
  const auto u = std::make_shared<const std::vector<double>>(bias_values(data, bias));
  Eigen::RowVectorXd xsum = Eigen::RowVectorXd::Zero(p);
  for (std::size_t i : target) xsum += x->row(static_cast<Eigen::Index>(i));
  const std::vector<std::size_t> target_rows(target.begin(), target.end());

  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "psi_te", start,
      [=, n = data.n()](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 1);
        const Eigen::VectorXd d = theta.segment(off_z, p) - theta.segment(off_zp, p);
        for (std::size_t i : target_rows)
          r(static_cast<Eigen::Index>(i), 0) = x->row(static_cast<Eigen::Index>(i)).dot(d) + (*u)[i] - theta(off_t);
        return r;
      },
      [=](const Eigen::VectorXd&) {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, off_t + 1);
        j.block(0, off_z, 1, p) = xsum;
        j.block(0, off_zp, 1, p) -= xsum;
        j(0, off_t) = -n0;
        return j;
      });
  detail::finish_with_stack(est, stack, options);
  return out;
}

ContrastEstimate estimate_psi_w(const CompositeDataset& data, int trial, const Contrast& contrast,
                                const DesignSpec& participation_design, const TreatmentModelSpec& treatment,
                                const AnalysisOptions& options, const BiasFunction* bias) {
  const auto trial_view = data.view(StratumSelector::of_trial(trial));
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  const auto rows_z = trial_arm_rows(data, trial, z);
  const auto rows_zp = trial_arm_rows(data, trial, zp);
  require_arm(rows_z, contrast.z, trial);
  require_arm(rows_zp, contrast.z_prime, trial);

  detail::ParticipationOdds odds(data, {trial}, participation_design);
  detail::TreatmentProbs probs(data, {trial}, treatment);
  const auto contributing = detail::select_rows(data, [&](std::size_t i) {
    return data.stratum(i) == trial && (data.treatment(i) == z || data.treatment(i) == zp);
  });
  if (options.weights.truncate_odds_quantile) odds.truncate(*options.weights.truncate_odds_quantile, contributing);

  const auto target = data.view(StratumSelector::target());
  const auto n0 = static_cast<double>(target.size());

  auto weight = [&, z, zp](const Eigen::VectorXd* theta, std::size_t i) {
    if (z == zp) return 0.0;
    const int a = data.treatment(i);
    const double l = theta ? probs.prob(*theta, i, a) : probs.prob(i, a);
    return a == z ? 1.0 / l : -1.0 / l;
  };

  double sum = 0.0;
  for (std::size_t i : contributing) sum += weight(nullptr, i) * odds.odds(i) * data.outcome(i);

  ContrastEstimate est = blank(Estimator::psi_w, contrast, std::to_string(trial));
  est.point = sum / n0;
  if (bias) {
    est.bias_adjustment = bias->target_mean(data);
    est.point += *est.bias_adjustment;
  }
  est.warnings = odds.warnings(contributing, options.weights.extreme_odds_warning);
  est.n_used = {{"target", target.size()},
                {"trial", trial_view.size()},
                {"arm_z", rows_z.size()},
                {"arm_zprime", rows_zp.size()}};

  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return est;
  }

  EstimatingStack stack(data.n());
  odds.attach(stack, "participation");
  probs.attach(stack);
  const Eigen::Index off_t = stack.dim();
  const auto u = bias_values(data, bias);
  const std::vector<std::size_t> target_rows(target.begin(), target.end());

  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "psi_w", start,
      [&, off_t](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n()), 1);
        for (std::size_t i : contributing)
          r(static_cast<Eigen::Index>(i), 0) = weight(&theta, i) * odds.odds(theta, i) * data.outcome(i);
        for (std::size_t i : target_rows) r(static_cast<Eigen::Index>(i), 0) = u[i] - theta(off_t);
        return r;
      },
      [&, off_t, z, zp](const Eigen::VectorXd& theta) {
        Eigen::RowVectorXd j = Eigen::RowVectorXd::Zero(off_t + 1);
        if (z != zp) {
          for (std::size_t i : contributing) {
            const double y = data.outcome(i);
            const double o = odds.odds(theta, i);
            odds.add_gradient(theta, i, weight(&theta, i) * y, j);
            const int a = data.treatment(i);
            probs.add_inv_prob_gradient(theta, i, a, (a == z ? 1.0 : -1.0) * o * y, j);
          }
        }
        j(off_t) = -n0;
        return Eigen::MatrixXd(j);
      });
  detail::finish_with_stack(est, stack, options);
  return est;
}

ContrastEstimate unadjusted_trial_effect(const CompositeDataset& data, int stratum, const Contrast& contrast,
                                         const AnalysisOptions& options) {
  const bool benchmark = stratum == 0;
  if (benchmark && !data.has_benchmark())
    fail(Errc::arm_missing, "target rows carry no benchmark treatment/outcome columns");
  const auto rows = benchmark ? data.view(StratumSelector::target()) : data.view(StratumSelector::of_trial(stratum));
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  auto arm_of = [&](std::size_t i) { return benchmark ? data.benchmark_treatment(i) : data.treatment(i); };
  auto y_of = [&](std::size_t i) { return benchmark ? data.benchmark_outcome(i) : data.outcome(i); };

  std::vector<std::size_t> in_z, in_zp;
  for (std::size_t i : rows) {
    if (arm_of(i) == z) in_z.push_back(i);
    if (arm_of(i) == zp) in_zp.push_back(i);
  }
  const std::string where = benchmark ? "the target sample" : "trial " + std::to_string(stratum);
  if (in_z.empty()) fail(Errc::arm_missing, where + " has no rows assigned to '" + contrast.z + "'");
  if (in_zp.empty()) fail(Errc::arm_missing, where + " has no rows assigned to '" + contrast.z_prime + "'");

  auto mean = [&](const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (std::size_t i : idx) s += y_of(i);
    return s / static_cast<double>(idx.size());
  };
  const double mz = mean(in_z);
  const double mzp = mean(in_zp);

  ContrastEstimate est = blank(Estimator::unadjusted, contrast, benchmark ? "target" : std::to_string(stratum));
  est.point = mz - mzp;
  est.n_used = {{"stratum", rows.size()}, {"arm_z", in_z.size()}, {"arm_zprime", in_zp.size()}};
  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return est;
  }

  // Two arm means and their difference.
  EstimatingStack stack(data.n());
  const std::size_t n = data.n();
  auto add_mean = [&](const std::vector<std::size_t>& idx, double m, const char* name) {
    const Eigen::Index off = stack.dim();
    Eigen::VectorXd start(1);
    start << m;
    const auto count = static_cast<double>(idx.size());
    stack.add_block(
        name, start,
        [&, idx, off, n](const Eigen::VectorXd& theta) {
          Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 1);
          for (std::size_t i : idx) r(static_cast<Eigen::Index>(i), 0) = y_of(i) - theta(off);
          return r;
        },
        [off, count](const Eigen::VectorXd&) {
          Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, off + 1);
          j(0, off) = -count;
          return j;
        });
    return off;
  };
  const Eigen::Index off_z = add_mean(in_z, mz, "mean[z]");
  const Eigen::Index off_zp = add_mean(in_zp, mzp, "mean[z']");
  const Eigen::Index off_d = stack.dim();
  const std::vector<std::size_t> all(rows.begin(), rows.end());
  const auto ns = static_cast<double>(all.size());
  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "difference", start,
      [all, off_z, off_zp, off_d, n](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 1);
        for (std::size_t i : all) r(static_cast<Eigen::Index>(i), 0) = theta(off_z) - theta(off_zp) - theta(off_d);
        return r;
      },
      [off_z, off_zp, off_d, ns](const Eigen::VectorXd&) {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, off_d + 1);
        j(0, off_z) += ns;
        j(0, off_zp) -= ns;
        j(0, off_d) = -ns;
        return j;
      });
  detail::finish_with_stack(est, stack, options);
  return est;
}

}  // namespace tmeta
