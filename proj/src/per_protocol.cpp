#include "transport_meta/per_protocol.hpp"

#include "model_blocks.hpp"
#include "transport_meta/error.hpp"
#include "transport_meta/inference.hpp"
#include "transport_meta/transport.hpp"

#include <map>
#include <memory>
#include <set>
#include <sstream>

namespace tmeta {

void JointContrast::validate() const {
  if (z == z_prime && a == a_prime)
    fail(Errc::invalid_contrast, "per-protocol contrast compares (" + z + ", " + a + ") with itself");
}

namespace {

void require_adherence(const CompositeDataset& data) {
  if (!data.has_adherence()) fail(Errc::missing_adherence, "per-protocol analysis needs a received-treatment column");
}

ContrastEstimate blank(Estimator e, const JointContrast& c, std::string source) {
  ContrastEstimate est;
  est.estimator = e;
  est.z = c.z;
  est.z_prime = c.z_prime;
  est.a = c.a;
  est.a_prime = c.a_prime;
  est.source = std::move(source);
  return est;
}

struct NestedFit {
  ThetaModel model;
  std::shared_ptr<const Eigen::MatrixXd> x_in;
  std::shared_ptr<const Eigen::MatrixXd> x_out;
  std::vector<std::size_t> inner_rows;
  std::vector<std::size_t> outer_rows;
};

NestedFit fit_nested(const CompositeDataset& data, int trial, const std::string& z_label, const std::string& a_label,
                     const DesignSpec& inner_design, const DesignSpec& outer_design,
                     const std::shared_ptr<const Eigen::MatrixXd>& x_in, const std::vector<std::string>& in_cols,
                     const std::shared_ptr<const Eigen::MatrixXd>& x_out, const std::vector<std::string>& out_cols) {
  const int z = detail::arm_code(data, z_label);
  const int a = detail::received_arm_code(data, a_label);
  NestedFit out;
  out.x_in = x_in;
  out.x_out = x_out;
  out.outer_rows = detail::trial_arm_rows(data, trial, z);
  out.inner_rows = detail::select_rows(
      data, [&](std::size_t i) { return data.stratum(i) == trial && data.treatment(i) == z && data.received(i) == a; });
  if (out.inner_rows.empty())
    fail(Errc::empty_adherence_cell, "trial " + std::to_string(trial) + " has no rows with Z = '" + z_label +
                                         "' and A = '" + a_label + "'");

  std::vector<double> y(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) y[i] = data.outcome(i);
  auto y_resp = std::make_shared<const GlmResponse>(GlmResponse::continuous(std::move(y)));
  out.model.inner_fit = fit_glm(x_in, in_cols, out.inner_rows, y_resp, Family::linear, inner_design);

  const Eigen::VectorXd pred = *x_in * out.model.inner_fit.theta();
  auto p_resp = std::make_shared<const GlmResponse>(
      GlmResponse::continuous(std::vector<double>(pred.data(), pred.data() + pred.size())));
  out.model.outer_fit = fit_glm(x_out, out_cols, out.outer_rows, p_resp, Family::linear, outer_design);
  return out;
}

// Adds the inner and outer regressions; returns the outer block's offset.
Eigen::Index add_nested_blocks(EstimatingStack& stack, const NestedFit& fit, const std::string& name) {
  const Eigen::Index off_in = detail::add_glm_block(stack, fit.model.inner_fit, name + ".inner");
  const Eigen::Index p_in = fit.x_in->cols();
  const Eigen::Index p_out = fit.x_out->cols();
  const Eigen::Index off_out = stack.dim();
  auto x_in = fit.x_in;
  auto x_out = fit.x_out;
  auto rows = std::make_shared<const std::vector<std::size_t>>(fit.outer_rows);
  const std::size_t n = stack.n();
  stack.add_block(
      name + ".outer", fit.model.outer_fit.theta(),
      [=](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), p_out);
        const Eigen::VectorXd b_in = theta.segment(off_in, p_in);
        const Eigen::VectorXd b_out = theta.segment(off_out, p_out);
        for (std::size_t i : *rows) {
          const auto ei = static_cast<Eigen::Index>(i);
          r.row(ei) = (x_in->row(ei).dot(b_in) - x_out->row(ei).dot(b_out)) * x_out->row(ei);
        }
        return r;
      },
      [=](const Eigen::VectorXd&) {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(p_out, off_out + p_out);
        for (std::size_t i : *rows) {
          const auto ei = static_cast<Eigen::Index>(i);
          j.block(0, off_in, p_out, p_in) += x_out->row(ei).transpose() * x_in->row(ei);
          j.rightCols(p_out) -= x_out->row(ei).transpose() * x_out->row(ei);
        }
        return j;
      });
  return off_out;
}

}  // namespace

PpTeResult estimate_pp_te(const CompositeDataset& data, int trial, const JointContrast& contrast,
                          const DesignSpec& inner_design, const DesignSpec& outer_design,
                          const AnalysisOptions& options) {
  require_adherence(data);
  contrast.validate();
  const auto trial_view = data.view(StratumSelector::of_trial(trial));

  DesignMatrix din = build_design(data, inner_design);
  DesignMatrix dout = build_design(data, outer_design);
  auto x_in = std::make_shared<const Eigen::MatrixXd>(std::move(din.values));
  auto x_out = std::make_shared<const Eigen::MatrixXd>(std::move(dout.values));

  const NestedFit fz = fit_nested(data, trial, contrast.z, contrast.a, inner_design, outer_design, x_in, din.columns,
                                  x_out, dout.columns);
  const NestedFit fzp = fit_nested(data, trial, contrast.z_prime, contrast.a_prime, inner_design, outer_design, x_in,
                                   din.columns, x_out, dout.columns);

  const auto target = data.view(StratumSelector::target());
  const auto n0 = static_cast<double>(target.size());
  const Eigen::VectorXd diff = fz.model.outer_fit.theta() - fzp.model.outer_fit.theta();
  double sum = 0.0;
  for (std::size_t i : target) sum += x_out->row(static_cast<Eigen::Index>(i)).dot(diff);

  PpTeResult out;
  out.theta_z = fz.model;
  out.theta_zprime = fzp.model;
  ContrastEstimate& est = out.estimate;
  est = blank(Estimator::pp_te, contrast, std::to_string(trial));
  est.point = sum / n0;
  est.n_used = {{"target", target.size()},
                {"trial", trial_view.size()},
                {"arm_z", fz.outer_rows.size()},
                {"arm_zprime", fzp.outer_rows.size()},
                {"adherent_z", fz.inner_rows.size()},
                {"adherent_zprime", fzp.inner_rows.size()}};
  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return out;
  }

  EstimatingStack stack(data.n());
  const Eigen::Index off_z = add_nested_blocks(stack, fz, "theta[z]");
  const Eigen::Index off_zp = add_nested_blocks(stack, fzp, "theta[z']");
  const Eigen::Index p = x_out->cols();
  const Eigen::Index off_t = stack.dim();
  Eigen::RowVectorXd xsum = Eigen::RowVectorXd::Zero(p);
  for (std::size_t i : target) xsum += x_out->row(static_cast<Eigen::Index>(i));
  const std::vector<std::size_t> target_rows(target.begin(), target.end());
  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "pp_te", start,
      [=, n = data.n()](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 1);
        const Eigen::VectorXd d = theta.segment(off_z, p) - theta.segment(off_zp, p);
        for (std::size_t i : target_rows)
          r(static_cast<Eigen::Index>(i), 0) = x_out->row(static_cast<Eigen::Index>(i)).dot(d) - theta(off_t);
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

namespace {

// Pr[A = a | X, L, S, Z = z]: one model per arm (pooled over the collection)
// or per (arm, trial).
class AdherenceProbs {
 public:
  AdherenceProbs(const CompositeDataset& data, const std::vector<int>& trials, const std::set<int>& arms,
                 const AdherenceModelSpec& spec)
      : data_(&data), per_trial_(spec.per_trial) {
    DesignSpec base = spec.design;
    base.trial_indicators = false;
    DesignMatrix dm = build_design(data, base);
    if (!spec.per_trial && spec.trial_indicators && trials.size() > 1) {
      const Eigen::Index old = dm.values.cols();
      dm.values.conservativeResize(Eigen::NoChange, old + static_cast<Eigen::Index>(trials.size()) - 1);
      for (std::size_t k = 1; k < trials.size(); ++k) {
        const auto col = old + static_cast<Eigen::Index>(k) - 1;
        for (std::size_t i = 0; i < data.n(); ++i)
          dm.values(static_cast<Eigen::Index>(i), col) = data.stratum(i) == trials[k] ? 1.0 : 0.0;
        dm.columns.push_back("S[" + std::to_string(trials[k]) + "]");
      }
    }
    auto x = std::make_shared<const Eigen::MatrixXd>(std::move(dm.values));
    std::vector<int> labels(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) labels[i] = data.received(i);

    std::vector<char> in(static_cast<std::size_t>(data.m()) + 1, 0);
    for (int s : trials) in[static_cast<std::size_t>(s)] = 1;
    for (int arm : arms) {
      const std::vector<int> groups = spec.per_trial ? trials : std::vector<int>{0};
      for (int g : groups) {
        const auto rows = detail::select_rows(data, [&](std::size_t i) {
          const int s = data.stratum(i);
          return s > 0 && in[static_cast<std::size_t>(s)] && data.treatment(i) == arm && (g == 0 || s == g);
        });
        std::set<int> received;
        for (std::size_t i : rows) received.insert(data.received(i));
        auto resp = std::make_shared<const GlmResponse>(
            GlmResponse::categorical(labels, std::vector<int>(received.begin(), received.end())));
        models_.emplace(std::make_pair(arm, g),
                        detail::CategoryProb::estimated(
                            fit_glm(x, dm.columns, rows, resp, Family::multinomial_logit, spec.design)));
      }
    }
  }

  const detail::CategoryProb& model(std::size_t i) const {
    return models_.at({data_->treatment(i), per_trial_ ? data_->stratum(i) : 0});
  }

  void attach(EstimatingStack& stack) {
    for (auto& [key, m] : models_)
      m.attach(stack, "adherence[" + std::to_string(key.first) + "," + std::to_string(key.second) + "]");
  }

 private:
  const CompositeDataset* data_;
  bool per_trial_;
  std::map<std::pair<int, int>, detail::CategoryProb> models_;
};

}  // namespace

ContrastEstimate estimate_pp_w(const CompositeDataset& data, const JointContrast& contrast,
                               const DesignSpec& participation_design, const TreatmentModelSpec& treatment,
                               const AdherenceModelSpec& adherence, const AnalysisOptions& options,
                               const std::vector<int>& collection) {
  require_adherence(data);
  contrast.validate();
  const auto trials = resolve_collection(data, collection);
  const int z = detail::arm_code(data, contrast.z);
  const int zp = detail::arm_code(data, contrast.z_prime);
  const int a = detail::received_arm_code(data, contrast.a);
  const int ap = detail::received_arm_code(data, contrast.a_prime);

  std::string empty;
  for (int s : trials) {
    for (auto [zz, aa, zl, al] : {std::tuple{z, a, contrast.z, contrast.a},
                                  std::tuple{zp, ap, contrast.z_prime, contrast.a_prime}}) {
      const auto rows = detail::select_rows(data, [&](std::size_t i) {
        return data.stratum(i) == s && data.treatment(i) == zz && data.received(i) == aa;
      });
      if (rows.empty()) {
        if (!empty.empty()) empty += "; ";
        empty += "trial " + std::to_string(s) + " (Z = '" + zl + "', A = '" + al + "')";
      }
    }
  }
  if (!empty.empty()) fail(Errc::empty_adherence_cell, "empty adherence cells: " + empty);

  detail::ParticipationOdds odds(data, trials, participation_design);
  detail::TreatmentProbs probs(data, trials, treatment);
  AdherenceProbs adh(data, trials, {z, zp}, adherence);

  std::vector<char> in(static_cast<std::size_t>(data.m()) + 1, 0);
  for (int s : trials) in[static_cast<std::size_t>(s)] = 1;
  auto side = [&](std::size_t i) {
    if (data.treatment(i) == z && data.received(i) == a) return 1;
    if (data.treatment(i) == zp && data.received(i) == ap) return -1;
    return 0;
  };
  const auto contributing = detail::select_rows(data, [&](std::size_t i) {
    return data.stratum(i) > 0 && in[static_cast<std::size_t>(data.stratum(i))] && side(i) != 0;
  });
  if (options.weights.truncate_odds_quantile) odds.truncate(*options.weights.truncate_odds_quantile, contributing);

  auto weight = [&](const Eigen::VectorXd* theta, std::size_t i) {
    const int sd = side(i);
    const int arm = data.treatment(i);
    const int rec = data.received(i);
    const double e = theta ? probs.prob(*theta, i, arm) : probs.prob(i, arm);
    const auto& am = adh.model(i);
    const double pa = theta ? am.prob(*theta, i, rec) : am.prob(i, rec);
    return sd / (e * pa);
  };

  const auto target = data.view(StratumSelector::target());
  const auto n0 = static_cast<double>(target.size());
  double sum = 0.0;
  for (std::size_t i : contributing) sum += weight(nullptr, i) * odds.odds(i) * data.outcome(i);

  ContrastEstimate est = blank(Estimator::pp_w, contrast, "pooled");
  est.point = sum / n0;
  est.warnings = odds.warnings(contributing, options.weights.extreme_odds_warning);
  std::size_t low = 0;
  std::string first_low;
  for (std::size_t i : contributing) {
    if (adh.model(i).prob(i, data.received(i)) >= kAdherencePositivityFloor) continue;
    if (low++ == 0) {
      std::ostringstream cell;
      cell << "row " << data.id(i) << " (S = " << data.stratum(i) << ", Z = '"
           << data.treatment_labels()[static_cast<std::size_t>(data.treatment(i))] << "', X = [";
      for (Eigen::Index j = 0; j < data.covariates().cols(); ++j)
        cell << (j ? ", " : "") << data.covariates()(static_cast<Eigen::Index>(i), j);
      cell << "], L = [";
      for (Eigen::Index j = 0; j < data.post_covariates().cols(); ++j)
        cell << (j ? ", " : "") << data.post_covariates()(static_cast<Eigen::Index>(i), j);
      cell << "])";
      first_low = cell.str();
    }
  }
  if (low > 0)
    est.warnings.push_back("SequentialPositivity: " + std::to_string(low) +
                           " contributing rows have fitted adherence probability below 1e-6; first: " + first_low);
  std::size_t pooled_n = 0;
  for (int s : trials) pooled_n += data.stratum_size(s);
  est.n_used = {{"target", target.size()},
                {"trials", pooled_n},
                {"trial_count", trials.size()},
                {"contributing", contributing.size()}};
  if (!options.sandwich) {
    detail::finish_point_only(est, options.level);
    return est;
  }

  EstimatingStack stack(data.n());
  odds.attach(stack, "participation");
  probs.attach(stack);
  adh.attach(stack);
  const Eigen::Index off_t = stack.dim();
  Eigen::VectorXd start(1);
  start << est.point;
  stack.add_block(
      "pp_w", start,
      [&, off_t](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n()), 1);
        for (std::size_t i : contributing)
          r(static_cast<Eigen::Index>(i), 0) = weight(&theta, i) * odds.odds(theta, i) * data.outcome(i);
        for (std::size_t i : target) r(static_cast<Eigen::Index>(i), 0) = -theta(off_t);
        return r;
      },
      [&, off_t](const Eigen::VectorXd& theta) {
        Eigen::RowVectorXd j = Eigen::RowVectorXd::Zero(off_t + 1);
        for (std::size_t i : contributing) {
          const double y = data.outcome(i);
          const double o = odds.odds(theta, i);
          const int sd = side(i);
          const int arm = data.treatment(i);
          const int rec = data.received(i);
          const auto& am = adh.model(i);
          const double e = probs.prob(theta, i, arm);
          const double pa = am.prob(theta, i, rec);
          odds.add_gradient(theta, i, weight(&theta, i) * y, j);
          // d[1/(e pa)] = (1/pa) d(1/e) + (1/e) d(1/pa)
          probs.add_inv_prob_gradient(theta, i, arm, sd * o * y / pa, j);
          if (am.has_parameters())
            j.segment(am.offset(), am.size()) += sd * o * y / e * am.inv_prob_gradient(theta, i, rec);
        }
        j(off_t) = -n0;
        return Eigen::MatrixXd(j);
      });
  detail::finish_with_stack(est, stack, options);
  return est;
}

}  // namespace tmeta
