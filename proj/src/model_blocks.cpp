#include "model_blocks.hpp"

#include "transport_meta/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace tmeta::detail {

std::vector<std::size_t> select_rows(const CompositeDataset& data, const std::function<bool(std::size_t)>& keep) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.n(); ++i)
    if (keep(i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> trial_rows(const CompositeDataset& data, const std::vector<int>& trials) {
  std::vector<char> in(static_cast<std::size_t>(data.m()) + 1, 0);
  for (int s : trials) in[static_cast<std::size_t>(s)] = 1;
  return select_rows(data, [&](std::size_t i) { return data.stratum(i) > 0 && in[static_cast<std::size_t>(data.stratum(i))]; });
}

std::vector<std::size_t> trial_arm_rows(const CompositeDataset& data, int trial, int arm) {
  return select_rows(data, [&](std::size_t i) { return data.stratum(i) == trial && data.treatment(i) == arm; });
}

int arm_code(const CompositeDataset& data, const std::string& label) {
  auto code = data.treatment_code(label);
  if (!code) fail(Errc::invalid_contrast, "treatment label '" + label + "' does not occur in the data");
  return *code;
}

int received_arm_code(const CompositeDataset& data, const std::string& label) {
  auto code = data.received_code(label);
  if (!code) fail(Errc::invalid_contrast, "received-treatment label '" + label + "' does not occur in the data");
  return *code;
}

Eigen::Index add_glm_block(EstimatingStack& stack, const FittedGlm& fit, const std::string& name) {
  const Eigen::Index offset = stack.dim();
  const Eigen::Index size = fit.dim();
  if (size == 0) return offset;
  const std::size_t n = stack.n();
  const std::size_t k = fit.family == Family::linear ? 1 : fit.categories.size();
  auto x = fit.x;
  auto response = fit.response;
  auto rows = std::make_shared<const std::vector<std::size_t>>(fit.fit_rows);
  const Family family = fit.family;
  return stack.add_block(
      name, fit.theta(),
      [=](const Eigen::VectorXd& theta) {
        return glm_score_rows(family, *x, *response, *rows, n, k, theta.segment(offset, size));
      },
      [=](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(size, offset + size);
        j.rightCols(size) = glm_score_jacobian(family, *x, *response, *rows, k, theta.segment(offset, size));
        return j;
      });
}

// ---------------------------------------------------------------------------

CategoryProb CategoryProb::estimated(FittedGlm fit) {
  CategoryProb out;
  out.local_theta_ = fit.theta();
  out.fit_ = std::move(fit);
  return out;
}

CategoryProb CategoryProb::known(std::map<int, double> probs) {
  CategoryProb out;
  out.known_ = std::move(probs);
  return out;
}

void CategoryProb::attach(EstimatingStack& stack, const std::string& name) {
  if (!has_parameters()) return;
  offset_ = add_glm_block(stack, *fit_, name);
  attached_ = true;
}

Eigen::VectorXd CategoryProb::own(const Eigen::VectorXd& theta) const {
  if (&theta == &local_theta_ || !attached_) return theta.head(size());
  return theta.segment(offset_, size());
}

double CategoryProb::prob(const Eigen::VectorXd& theta, std::size_t i, int category) const {
  if (!fit_) {
    auto it = known_.find(category);
    if (it == known_.end()) fail(Errc::config, "no known probability for treatment code " + std::to_string(category));
    return it->second;
  }
  const auto& cats = fit_->categories;
  auto it = std::find(cats.begin(), cats.end(), category);
  if (it == cats.end()) return 0.0;
  if (cats.size() == 1) return 1.0;
  const Eigen::Index p = fit_->beta.rows();
  const Eigen::VectorXd beta_flat = own(theta);
  const Eigen::Map<const Eigen::MatrixXd> beta(beta_flat.data(), p, fit_->beta.cols());
  return softmax_probs(fit_->x->row(static_cast<Eigen::Index>(i)), beta)(it - cats.begin());
}

Eigen::RowVectorXd CategoryProb::inv_prob_gradient(const Eigen::VectorXd& theta, std::size_t i, int category) const {
  Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(size());
  if (!has_parameters()) return g;
  const auto& cats = fit_->categories;
  const auto c = std::find(cats.begin(), cats.end(), category) - cats.begin();
  const Eigen::Index p = fit_->beta.rows();
  const Eigen::VectorXd beta_flat = own(theta);
  const Eigen::Map<const Eigen::MatrixXd> beta(beta_flat.data(), p, fit_->beta.cols());
  const auto xi = fit_->x->row(static_cast<Eigen::Index>(i));
  const Eigen::VectorXd probs = softmax_probs(xi, beta);
  for (Eigen::Index k = 1; k < probs.size(); ++k)
    g.segment((k - 1) * p, p) = -((c == k ? 1.0 : 0.0) - probs(k)) / probs(c) * xi;
  return g;
}

// ---------------------------------------------------------------------------

TreatmentProbs::TreatmentProbs(const CompositeDataset& data, const std::vector<int>& trials,
                               const TreatmentModelSpec& spec)
    : data_(&data) {
  if (spec.mode == TreatmentModelSpec::Mode::estimated) {
    const DesignMatrix dm = build_design(data, spec.design);
    auto x = std::make_shared<const Eigen::MatrixXd>(dm.values);
    std::vector<int> labels(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) labels[i] = data.treatment(i);
    for (int s : trials) {
      const auto rows = data.view(StratumSelector::of_trial(s));
      std::set<int> arms;
      for (std::size_t i : rows) arms.insert(data.treatment(i));
      auto response = std::make_shared<const GlmResponse>(
          GlmResponse::categorical(labels, std::vector<int>(arms.begin(), arms.end())));
      FittedGlm fit = fit_glm(x, dm.columns, rows, response, Family::multinomial_logit, spec.design);
      by_trial_.emplace(s, CategoryProb::estimated(std::move(fit)));
    }
    return;
  }
  for (int s : trials) {
    const auto& source = spec.known_by_trial.count(s) ? spec.known_by_trial.at(s) : spec.known;
    std::map<int, double> probs;
    for (const auto& [label, p] : source) {
      if (!(p > 0.0 && p < 1.0))
        fail(Errc::probability_out_of_range,
             "known treatment probability for arm '" + label + "' is " + std::to_string(p) + ", outside (0, 1)");
      if (auto code = data.treatment_code(label)) probs[*code] = p;
    }
    const auto rows = data.view(StratumSelector::of_trial(s));
    for (std::size_t i : rows)
      if (!probs.count(data.treatment(i)))
        fail(Errc::config, "no known treatment probability for arm '" + data.treatment_labels()[static_cast<std::size_t>(data.treatment(i))] +
                               "' in trial " + std::to_string(s));
    by_trial_.emplace(s, CategoryProb::known(std::move(probs)));
  }
}

double TreatmentProbs::prob(const Eigen::VectorXd& theta, std::size_t i, int arm) const {
  return by_trial_.at(data_->stratum(i)).prob(theta, i, arm);
}

double TreatmentProbs::prob(std::size_t i, int arm) const { return by_trial_.at(data_->stratum(i)).prob(i, arm); }

void TreatmentProbs::add_inv_prob_gradient(const Eigen::VectorXd& theta, std::size_t i, int arm, double scale,
                                           Eigen::Ref<Eigen::RowVectorXd> out) const {
  const auto& model = by_trial_.at(data_->stratum(i));
  if (!model.has_parameters()) return;
  out.segment(model.offset(), model.size()) += scale * model.inv_prob_gradient(theta, i, arm);
}

void TreatmentProbs::attach(EstimatingStack& stack) {
  for (auto& [s, model] : by_trial_) model.attach(stack, "treatment[" + std::to_string(s) + "]");
}

// ---------------------------------------------------------------------------

ParticipationOdds::ParticipationOdds(const CompositeDataset& data, const std::vector<int>& trials,
                                     const DesignSpec& design)
    : data_(&data) {
  std::vector<int> strata = trials;
  strata.push_back(0);
  std::vector<char> in(static_cast<std::size_t>(data.m()) + 1, 0);
  for (int s : strata) in[static_cast<std::size_t>(s)] = 1;
  const auto rows = select_rows(data, [&](std::size_t i) { return in[static_cast<std::size_t>(data.stratum(i))] != 0; });
  std::vector<double> y(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) y[i] = data.stratum(i) == 0 ? 1.0 : 0.0;
  fit_ = fit_glm(data, rows, GlmResponse::continuous(std::move(y)), design, Family::binary_logit);
  capped_.assign(data.n(), 0);
}

void ParticipationOdds::truncate(double quantile, const std::vector<std::size_t>& contributing) {
  if (!(quantile > 0.0 && quantile <= 1.0)) fail(Errc::config, "odds truncation quantile must be in (0, 1]");
  if (contributing.empty()) return;
  std::vector<double> v;
  v.reserve(contributing.size());
  for (std::size_t i : contributing) v.push_back(odds(i));
  std::sort(v.begin(), v.end());
  cap_ = sorted_quantile(v, quantile);
  capped_count_ = 0;
  for (std::size_t i : contributing) {
    if (!capped_[i] && std::exp(fit_.x->row(static_cast<Eigen::Index>(i)).dot(fit_.beta.col(0))) > *cap_) {
      capped_[i] = 1;
      ++capped_count_;
    }
  }
}

double ParticipationOdds::odds(std::size_t i) const {
  if (capped_[i]) return *cap_;
  return std::exp(fit_.x->row(static_cast<Eigen::Index>(i)).dot(fit_.beta.col(0)));
}

double ParticipationOdds::odds(const Eigen::VectorXd& theta, std::size_t i) const {
  if (capped_[i]) return *cap_;
  const Eigen::Index p = fit_.dim();
  return std::exp(fit_.x->row(static_cast<Eigen::Index>(i)).dot(theta.segment(attached_ ? offset_ : 0, p)));
}

void ParticipationOdds::add_gradient(const Eigen::VectorXd& theta, std::size_t i, double scale,
                                     Eigen::Ref<Eigen::RowVectorXd> out) const {
  if (capped_[i]) return;
  out.segment(offset_, fit_.dim()) += scale * odds(theta, i) * fit_.x->row(static_cast<Eigen::Index>(i));
}

void ParticipationOdds::attach(EstimatingStack& stack, const std::string& name) {
  offset_ = add_glm_block(stack, fit_, name);
  attached_ = true;
}

std::vector<std::string> ParticipationOdds::warnings(const std::vector<std::size_t>& contributing,
                                                     double threshold) const {
  std::vector<std::string> out;
  if (cap_) {
    std::ostringstream msg;
    msg.precision(6);
    msg << "OddsTruncated: " << capped_count_ << " contributing rows capped at odds " << *cap_;
    out.push_back(msg.str());
    return out;
  }
  std::size_t count = 0;
  double top = 0.0;
  for (std::size_t i : contributing) {
    const double o = odds(i);
    if (o > threshold) {
      ++count;
      top = std::max(top, o);
    }
  }
  if (count > 0) {
    std::ostringstream msg;
    msg.precision(6);
    msg << "ExtremeWeight: " << count << " contributing rows have participation odds above " << threshold
        << " (max " << top << ")";
    out.push_back(msg.str());
  }
  return out;
}

// ---------------------------------------------------------------------------

double signed_inverse(const TreatmentProbs& probs, const CompositeDataset& data, const Eigen::VectorXd* theta,
                      std::size_t i, int z, int zp) {
  if (z == zp) return 0.0;
  const int a = data.treatment(i);
  if (a != z && a != zp) return 0.0;
  const double l = theta ? probs.prob(*theta, i, a) : probs.prob(i, a);
  return a == z ? 1.0 / l : -1.0 / l;
}

void add_signed_inverse_gradient(const TreatmentProbs& probs, const CompositeDataset& data,
                                 const Eigen::VectorXd& theta, std::size_t i, int z, int zp, double scale,
                                 Eigen::Ref<Eigen::RowVectorXd> out) {
  if (z == zp) return;
  const int a = data.treatment(i);
  if (a != z && a != zp) return;
  probs.add_inv_prob_gradient(theta, i, a, a == z ? scale : -scale, out);
}

Eigen::Index add_transformed_outcome_block(EstimatingStack& stack, const CompositeDataset& data,
                                           const TreatmentProbs& probs, std::shared_ptr<const Eigen::MatrixXd> x,
                                           std::vector<std::size_t> rows, const Eigen::VectorXd& beta, int z, int zp,
                                           const std::string& name) {
  const Eigen::Index off_b = stack.dim();
  const Eigen::Index p = x->cols();
  auto shared_rows = std::make_shared<const std::vector<std::size_t>>(std::move(rows));
  const CompositeDataset* d = &data;
  const TreatmentProbs* pr = &probs;
  return stack.add_block(
      name, beta,
      [=](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d->n()), p);
        const Eigen::VectorXd b = theta.segment(off_b, p);
        for (std::size_t i : *shared_rows) {
          const auto ei = static_cast<Eigen::Index>(i);
          const double ui = signed_inverse(*pr, *d, &theta, i, z, zp) * d->outcome(i);
          r.row(ei) = (ui - x->row(ei).dot(b)) * x->row(ei);
        }
        return r;
      },
      [=](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(p, off_b + p);
        Eigen::RowVectorXd g(off_b);
        for (std::size_t i : *shared_rows) {
          const auto ei = static_cast<Eigen::Index>(i);
          if (off_b > 0) {
            g.setZero();
            add_signed_inverse_gradient(*pr, *d, theta, i, z, zp, d->outcome(i), g);
            j.leftCols(off_b) += x->row(ei).transpose() * g;
          }
          j.rightCols(p) -= x->row(ei).transpose() * x->row(ei);
        }
        return j;
      });
}

// ---------------------------------------------------------------------------

void finish_with_stack(ContrastEstimate& est, const EstimatingStack& stack, const AnalysisOptions& options) {
  if (options.inspect_stack) options.inspect_stack(stack);
  const double level = options.level;
  const SandwichResult sw = sandwich_variance(stack);
  est.variance_method = "sandwich";
  set_wald_interval(est, sw.target_variance, level);
}

void finish_point_only(ContrastEstimate& est, double level) {
  est.variance_method = "none";
  est.variance = 0.0;
  est.level = level;
  est.ci_lower = est.point;
  est.ci_upper = est.point;
}

}  // namespace tmeta::detail
