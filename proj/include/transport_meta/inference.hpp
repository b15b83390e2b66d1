#pragma once

#include "transport_meta/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tmeta {

// Stacked M-estimation: every working model and every target parameter
// contributes a block of per-row estimating functions. Blocks may depend on
// parameters of earlier blocks, never on later ones.
class EstimatingStack {
 public:
  // Per-row values of the block's equations at theta (n x block size).
  using RowsFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& theta)>;
  // Derivative of the block's row-sum with respect to theta[0 .. offset+size)
  // (block size x (offset + size)).
  using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& theta)>;

  explicit EstimatingStack(std::size_t n) : n_(n) {}

  // Returns the block's offset into theta.
  Eigen::Index add_block(std::string name, const Eigen::VectorXd& estimate, RowsFn rows, JacobianFn jacobian);

  std::size_t n() const noexcept { return n_; }
  Eigen::Index dim() const noexcept { return theta_.size(); }
  const Eigen::VectorXd& theta() const noexcept { return theta_; }
  std::vector<std::string> block_names() const;

  Eigen::MatrixXd contributions(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd equation_sum(const Eigen::VectorXd& theta) const;
  double max_equation_residual() const { return equation_sum(theta_).lpNorm<Eigen::Infinity>(); }

  // A = (1/n) sum_i d psi_i / d theta at theta.
  Eigen::MatrixXd bread() const;
  // Same by central differences of the summed equations.
  Eigen::MatrixXd numeric_bread(double step = 1e-6) const;
  // B = (1/n) sum_i psi_i psi_i^T.
  Eigen::MatrixXd meat() const;
  // A^{-1} B A^{-T} / n. Throws SingularBread.
  Eigen::MatrixXd covariance() const;

 private:
  struct Block {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
    RowsFn rows;
    JacobianFn jacobian;
  };

  std::size_t n_;
  Eigen::VectorXd theta_;
  std::vector<Block> blocks_;
};

struct SandwichResult {
  Eigen::MatrixXd covariance;
  double target_variance = 0.0;
};

// Covariance of theta and the variance of its last entry (the target
// parameter by convention).
SandwichResult sandwich_variance(const EstimatingStack& stack);

struct WaldTest {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

// Wald test of C theta = 0 given cov(theta).
WaldTest wald_test(const Eigen::VectorXd& estimate, const Eigen::MatrixXd& covariance, const Eigen::MatrixXd& contrasts);
double chi_square_upper_tail(double statistic, double df);

// Worker count: explicit request, capped by TRANSPORT_META_THREADS.
std::size_t worker_count(std::size_t requested);

// Runs fn(0..count-1) across up to `threads` workers. Callers write results
// by index so the outcome is schedule independent.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

struct BootstrapConfig {
  std::size_t replicates = 1000;
  std::uint64_t seed = 0;
  bool stratified = true;
  std::size_t threads = 1;
  double level = 0.95;
};

struct BootstrapResult {
  // Successful replicate values, in replicate order.
  std::vector<double> values;
  std::size_t requested = 0;
  std::size_t failed = 0;
  double mean = 0.0;
  double variance = 0.0;
  double percentile_lower = 0.0;
  double percentile_upper = 0.0;
};

// Row indices of bootstrap replicate r: stratified draws keep every n_s.
std::vector<std::size_t> bootstrap_indices(const CompositeDataset& data, std::uint64_t seed, std::uint64_t replicate,
                                           bool stratified);

// Replicates that throw tmeta::Error are dropped and counted; more than 10%
// failures raises TooManyFailures.
BootstrapResult bootstrap(const CompositeDataset& data, const std::function<double(const CompositeDataset&)>& estimator,
                          const BootstrapConfig& config);

// Type-7 sample quantile of sorted values.
double sorted_quantile(const std::vector<double>& sorted, double prob);

}  // namespace tmeta
