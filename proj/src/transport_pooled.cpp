#include "transport_meta/transport.hpp"

#include "model_blocks.hpp"
#include "transport_meta/error.hpp"
#include "transport_meta/inference.hpp"

#include <algorithm>
#include <memory>

namespace tmeta {

using detail::arm_code;
using detail::trial_arm_rows;

std::vector<int> resolve_collection(const CompositeDataset& data, const std::vector<int>& collection) {
  if (collection.empty()) return data.trials();
  std::vector<int> out = collection;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (int s : out) (void)data.view(StratumSelector::of_trial(s));
  return out;
}

std::vector<int> restrict_collection(const CompositeDataset& data, const Contrast& contrast) {
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  std::vector<int> out;
  for (int s : data.trials())
    if (!trial_arm_rows(data, s, z).empty() && !trial_arm_rows(data, s, zp).empty()) out.push_back(s);
  if (out.empty())
    fail(Errc::trial_lacks_arm, "no trial contains both arms '" + contrast.z + "' and '" + contrast.z_prime + "'");
  return out;
}

void require_arms(const CompositeDataset& data, const Contrast& contrast, const std::vector<int>& collection) {
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  std::string offenders;
  for (int s : collection) {
    std::string missing;
    if (trial_arm_rows(data, s, z).empty()) missing = contrast.z;
    if (trial_arm_rows(data, s, zp).empty()) missing += (missing.empty() ? "" : ", ") + contrast.z_prime;
    if (missing.empty()) continue;
    if (!offenders.empty()) offenders += "; ";
    offenders += "trial " + std::to_string(s) + " lacks " + missing;
  }
  if (!offenders.empty()) fail(Errc::trial_lacks_arm, offenders);
}

namespace {

ContrastEstimate blank(Estimator e, const Contrast& c) {
  ContrastEstimate est;
  est.estimator = e;
  est.z = c.z;
  est.z_prime = c.z_prime;
  est.source = "pooled";
  return est;
}

std::map<std::string, std::size_t> pooled_counts(const CompositeDataset& data, const std::vector<int>& collection) {
  std::map<std::string, std::size_t> out{{"target", data.stratum_size(0)}};
  std::size_t total = 0;
  for (int s : collection) total += data.stratum_size(s);
  out["trials"] = total;
  out["trial_count"] = collection.size();
  return out;
}

}  // namespace

std::vector<double> build_transformed_outcome(const CompositeDataset& data, const Contrast& contrast,
                                              const TreatmentModelSpec& treatment,
                                              const std::vector<int>& collection) {
  const auto trials = resolve_collection(data, collection);
  require_arms(data, contrast, trials);
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  detail::TreatmentProbs probs(data, trials, treatment);
  std::vector<double> u(data.n(), 0.0);
  for (std::size_t i : detail::trial_rows(data, trials))
    u[i] = detail::signed_inverse(probs, data, nullptr, i, z, zp) * data.outcome(i);
  return u;
}

PhiTeResult estimate_phi_te(const CompositeDataset& data, const Contrast& contrast, const DesignSpec& tau_design,
                            const TreatmentModelSpec& treatment, const AnalysisOptions& options,
                            const std::vector<int>& collection) {
  const auto trials = resolve_collection(data, collection);
  require_arms(data, contrast, trials);
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);
  detail::TreatmentProbs probs(data, trials, treatment);
  const auto pooled = detail::trial_rows(data, trials);

  std::vector<double> u(data.n(), 0.0);
  for (std::size_t i : pooled) u[i] = detail::signed_inverse(probs, data, nullptr, i, z, zp) * data.outcome(i);

  DesignMatrix dm = build_design(data, tau_design);
  auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
  auto response = std::make_shared<const GlmResponse>(GlmResponse::continuous(std::move(u)));

  PhiTeResult out;
  out.tau.design = tau_design;
  out.tau.collection = trials;
  out.tau.t_fit = fit_glm(x, dm.columns, pooled, response, Family::linear, tau_design);

  const auto target = data.view(StratumSelector::target());
  const auto n0 = static_cast<double>(target.size());
  const Eigen::VectorXd beta = out.tau.t_fit.theta();
  double sum = 0.0;
  for (std::size_t i : target) sum += x->row(static_cast<Eigen::Index>(i)).dot(beta);

  ContrastEstimate& est = out.estimate;
  est = blank(Estimator::phi_te, contrast);
  est.point = sum / n0;
  est.n_used = pooled_counts(data, trials);
  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return out;
  }

  EstimatingStack stack(data.n());
  probs.attach(stack);
  const Eigen::Index off_b = detail::add_transformed_outcome_block(stack, data, probs, x, pooled, beta, z, zp, "tau");
  const Eigen::Index p = x->cols();
  const Eigen::Index off_t = stack.dim();
  Eigen::RowVectorXd xsum = Eigen::RowVectorXd::Zero(p);
  for (std::size_t i : target) xsum += x->row(static_cast<Eigen::Index>(i));
  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "phi_te", start,
      [&, off_b, off_t, p](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n()), 1);
        const Eigen::VectorXd b = theta.segment(off_b, p);
        for (std::size_t i : target)
          r(static_cast<Eigen::Index>(i), 0) = x->row(static_cast<Eigen::Index>(i)).dot(b) - theta(off_t);
        return r;
      },
      [=](const Eigen::VectorXd&) {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, off_t + 1);
        j.block(0, off_b, 1, p) = xsum;
        j(0, off_t) = -n0;
        return j;
      });
  detail::finish_with_stack(est, stack, options);
  return out;
}

ContrastEstimate estimate_phi_w(const CompositeDataset& data, const Contrast& contrast,
                                const DesignSpec& participation_design, const TreatmentModelSpec& treatment,
                                const AnalysisOptions& options, const std::vector<int>& collection) {
  const auto trials = resolve_collection(data, collection);
  require_arms(data, contrast, trials);
  const int z = arm_code(data, contrast.z);
  const int zp = arm_code(data, contrast.z_prime);

  detail::ParticipationOdds odds(data, trials, participation_design);
  detail::TreatmentProbs probs(data, trials, treatment);
  std::vector<char> in(static_cast<std::size_t>(data.m()) + 1, 0);
  for (int s : trials) in[static_cast<std::size_t>(s)] = 1;
  const auto contributing = detail::select_rows(data, [&](std::size_t i) {
    return data.stratum(i) > 0 && in[static_cast<std::size_t>(data.stratum(i))] &&
           (data.treatment(i) == z || data.treatment(i) == zp);
  });
  if (options.weights.truncate_odds_quantile) odds.truncate(*options.weights.truncate_odds_quantile, contributing);

  const auto target = data.view(StratumSelector::target());
  const auto n0 = static_cast<double>(target.size());
  double sum = 0.0;
  for (std::size_t i : contributing)
    sum += detail::signed_inverse(probs, data, nullptr, i, z, zp) * odds.odds(i) * data.outcome(i);

  ContrastEstimate est = blank(Estimator::phi_w, contrast);
  est.point = sum / n0;
  est.warnings = odds.warnings(contributing, options.weights.extreme_odds_warning);
  est.n_used = pooled_counts(data, trials);
  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return est;
  }

  EstimatingStack stack(data.n());
  odds.attach(stack, "participation");
  probs.attach(stack);
  const Eigen::Index off_t = stack.dim();
  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "phi_w", start,
      [&, off_t, z, zp](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n()), 1);
        for (std::size_t i : contributing)
          r(static_cast<Eigen::Index>(i), 0) =
              detail::signed_inverse(probs, data, &theta, i, z, zp) * odds.odds(theta, i) * data.outcome(i);
        for (std::size_t i : target) r(static_cast<Eigen::Index>(i), 0) = -theta(off_t);
        return r;
      },
      [&, off_t, z, zp](const Eigen::VectorXd& theta) {
        Eigen::RowVectorXd j = Eigen::RowVectorXd::Zero(off_t + 1);
        for (std::size_t i : contributing) {
          const double y = data.outcome(i);
          odds.add_gradient(theta, i, detail::signed_inverse(probs, data, &theta, i, z, zp) * y, j);
          detail::add_signed_inverse_gradient(probs, data, theta, i, z, zp, odds.odds(theta, i) * y, j);
        }
        j(off_t) = -n0;
        return Eigen::MatrixXd(j);
      });
  detail::finish_with_stack(est, stack, options);
  return est;
}

SweepResult per_trial_transport_sweep(const CompositeDataset& data, const Contrast& contrast,
                                      const SingleTrialConfig& config, std::size_t threads) {
  const auto trials = data.trials();
  struct Slot {
    std::optional<ContrastEstimate> est;
    std::optional<SweepFailure> failure;
  };
  std::vector<Slot> slots(trials.size() * 2);
  parallel_for(slots.size(), threads, [&](std::size_t k) {
    const int s = trials[k / 2];
    const Estimator e = k % 2 == 0 ? Estimator::psi_te : Estimator::psi_w;
    try {
      slots[k].est = e == Estimator::psi_te
                         ? estimate_psi_te(data, s, contrast, config.outcome_design, config.options).estimate
                         : estimate_psi_w(data, s, contrast, config.participation_design, config.treatment,
                                          config.options);
    } catch (const Error& err) {
      if (err.code() == Errc::invalid_contrast || err.code() == Errc::config) throw;
      slots[k].failure = SweepFailure{s, e, std::string(errc_name(err.code())), err.what()};
    }
  });
  SweepResult out;
  for (auto& slot : slots) {
    if (slot.est) out.estimates.push_back(std::move(*slot.est));
    if (slot.failure) out.failures.push_back(std::move(*slot.failure));
  }
  return out;
}

}  // namespace tmeta
