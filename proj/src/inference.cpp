#include "transport_meta/inference.hpp"

#include "transport_meta/error.hpp"
#include "transport_meta/linalg.hpp"
#include "transport_meta/rng.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace tmeta {

Eigen::Index EstimatingStack::add_block(std::string name, const Eigen::VectorXd& estimate, RowsFn rows,
                                        JacobianFn jacobian) {
  Block b;
  b.name = std::move(name);
  b.offset = theta_.size();
  b.size = estimate.size();
  b.rows = std::move(rows);
  b.jacobian = std::move(jacobian);
  Eigen::VectorXd grown(theta_.size() + estimate.size());
  grown << theta_, estimate;
  theta_ = std::move(grown);
  blocks_.push_back(std::move(b));
  return blocks_.back().offset;
}

std::vector<std::string> EstimatingStack::block_names() const {
  std::vector<std::string> out;
  for (const auto& b : blocks_) out.push_back(b.name);
  return out;
}

Eigen::MatrixXd EstimatingStack::contributions(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_), theta_.size());
  for (const auto& b : blocks_) {
    if (b.size == 0) continue;
    out.middleCols(b.offset, b.size) = b.rows(theta);
  }
  return out;
}

Eigen::VectorXd EstimatingStack::equation_sum(const Eigen::VectorXd& theta) const {
  return contributions(theta).colwise().sum().transpose();
}

Eigen::MatrixXd EstimatingStack::bread() const {
  const Eigen::Index d = theta_.size();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (const auto& b : blocks_) {
    if (b.size == 0) continue;
    const Eigen::MatrixXd j = b.jacobian(theta_);
    a.block(b.offset, 0, b.size, j.cols()) = j;
  }
  return a / static_cast<double>(n_);
}

Eigen::MatrixXd EstimatingStack::numeric_bread(double step) const {
  const Eigen::Index d = theta_.size();
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const double h = step * std::max(1.0, std::abs(theta_(k)));
    Eigen::VectorXd up = theta_, down = theta_;
    up(k) += h;
    down(k) -= h;
    a.col(k) = (equation_sum(up) - equation_sum(down)) / (2.0 * h);
  }
  return a / static_cast<double>(n_);
}

Eigen::MatrixXd EstimatingStack::meat() const {
  const Eigen::MatrixXd c = contributions(theta_);
  return c.transpose() * c / static_cast<double>(n_);
}

Eigen::MatrixXd EstimatingStack::covariance() const {
  Eigen::MatrixXd a_inv;
  if (!linalg::checked_inverse(bread(), a_inv))
    fail(Errc::singular_bread, "estimating-equation Jacobian is not invertible");
  return a_inv * meat() * a_inv.transpose() / static_cast<double>(n_);
}

SandwichResult sandwich_variance(const EstimatingStack& stack) {
  SandwichResult out;
  out.covariance = stack.covariance();
  const Eigen::Index last = stack.dim() - 1;
  out.target_variance = std::max(0.0, out.covariance(last, last));
  return out;
}

double chi_square_upper_tail(double statistic, double df) {
  if (df <= 0) return 1.0;
  if (!(statistic > 0.0)) return 1.0;
  return boost::math::gamma_q(df / 2.0, statistic / 2.0);
}

WaldTest wald_test(const Eigen::VectorXd& estimate, const Eigen::MatrixXd& covariance,
                   const Eigen::MatrixXd& contrasts) {
  WaldTest out;
  const Eigen::VectorXd diff = contrasts * estimate;
  const Eigen::MatrixXd v = contrasts * covariance * contrasts.transpose();
  out.df = static_cast<std::size_t>(contrasts.rows());
  out.statistic = std::max(0.0, diff.dot(linalg::pinv_symmetric(v) * diff));
  out.p_value = chi_square_upper_tail(out.statistic, static_cast<double>(out.df));
  return out;
}

std::size_t worker_count(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TRANSPORT_META_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, n);
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(std::max<std::size_t>(1, threads), std::max<std::size_t>(1, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::size_t> bootstrap_indices(const CompositeDataset& data, std::uint64_t seed, std::uint64_t replicate,
                                           bool stratified) {
  Rng rng = Rng::substream(seed, replicate);
  std::vector<std::size_t> out;
  out.reserve(data.n());
  if (stratified) {
    for (int s = 0; s <= data.m(); ++s) {
      const auto rows = s == 0 ? data.view(StratumSelector::target()) : data.view(StratumSelector::of_trial(s));
      for (std::size_t k = 0; k < rows.size(); ++k) out.push_back(rows[rng.below(rows.size())]);
    }
  } else {
    for (std::size_t k = 0; k < data.n(); ++k) out.push_back(rng.below(data.n()));
  }
  return out;
}

double sorted_quantile(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) return std::nan("");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapResult bootstrap(const CompositeDataset& data, const std::function<double(const CompositeDataset&)>& estimator,
                          const BootstrapConfig& config) {
  if (config.replicates < 2) fail(Errc::config, "bootstrap needs at least 2 replicates");
  std::vector<double> values(config.replicates, 0.0);
  std::vector<char> ok(config.replicates, 0);
  parallel_for(config.replicates, worker_count(config.threads), [&](std::size_t r) {
    const auto idx = bootstrap_indices(data, config.seed, r, config.stratified);
    try {
      const double v = estimator(data.subset(idx));
      if (std::isfinite(v)) {
        values[r] = v;
        ok[r] = 1;
      }
    } catch (const Error&) {
    }
  });

  BootstrapResult out;
  out.requested = config.replicates;
  for (std::size_t r = 0; r < config.replicates; ++r) {
    if (ok[r])
      out.values.push_back(values[r]);
    else
      ++out.failed;
  }
  if (static_cast<double>(out.failed) > 0.1 * static_cast<double>(config.replicates))
    fail(Errc::too_many_failures, std::to_string(out.failed) + " of " + std::to_string(config.replicates) +
                                      " bootstrap replicates failed");
  if (out.values.size() < 2) fail(Errc::too_many_failures, "fewer than 2 successful bootstrap replicates");

  double sum = 0.0;
  for (double v : out.values) sum += v;
  out.mean = sum / static_cast<double>(out.values.size());
  double ss = 0.0;
  for (double v : out.values) ss += (v - out.mean) * (v - out.mean);
  out.variance = ss / static_cast<double>(out.values.size() - 1);

  std::vector<double> sorted = out.values;
  std::sort(sorted.begin(), sorted.end());
  const double alpha = 1.0 - config.level;
  out.percentile_lower = sorted_quantile(sorted, alpha / 2.0);
  out.percentile_upper = sorted_quantile(sorted, 1.0 - alpha / 2.0);
  return out;
}

}  // namespace tmeta
