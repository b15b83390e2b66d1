#pragma once

#include "transport_meta/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tmeta {

struct CovariateLaw {
  enum class Kind { normal, discrete };
  Kind kind = Kind::normal;
  double mean = 0.0;
  double sd = 1.0;
  std::vector<double> levels;
  std::vector<double> probs;

  double expectation() const;
};

struct StratumLaw {
  // Sampling proportion of this stratum.
  double share = 0.0;
  // One law per covariate, independent.
  std::vector<CovariateLaw> covariates;
  // Trials only: assignment probability per arm.
  std::vector<double> randomization;
  // Additive per-arm shift of the counterfactual means in this stratum.
  // Unequal shifts across strata break exchangeability of the effect.
  std::vector<double> arm_shift;
};

// Post-assignment covariate L and received treatment A. L depends on X and
// the assigned arm's index; the assigned arm is received with probability
// expit(adhere_intercept + adhere_x'X + adhere_l L), otherwise the next arm.
struct AdherenceLaw {
  enum class Kind { normal, bernoulli };
  Kind l_kind = Kind::normal;
  double l_intercept = 0.0;
  std::vector<double> l_x;
  double l_arm = 0.0;
  double l_sd = 1.0;
  std::vector<double> adhere_intercept;
  std::vector<std::vector<double>> adhere_x;
  std::vector<double> adhere_l;
  // Outcome gains per unit of L and per received arm.
  double l_coef = 0.0;
  std::vector<double> received_coef;
};

struct SimWorld {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double noise_sd = 1.0;
  std::vector<std::string> arms;
  std::vector<std::string> covariate_names;
  // Index 0 is the target population, then trials 1..m.
  std::vector<StratumLaw> strata;
  // Counterfactual mean of arm k: intercepts[k] + slopes[k]'X (+ shift).
  std::vector<double> intercepts;
  std::vector<std::vector<double>> slopes;
  std::optional<AdherenceLaw> adherence;

  int m() const noexcept { return static_cast<int>(strata.size()) - 1; }
  bool all_discrete() const;
  // Throws InvalidWorld.
  void validate() const;
};

SimWorld parse_world_toml(std::string_view text);
SimWorld load_world(const std::filesystem::path& path);

struct TruthEntry {
  std::string z;
  std::string z_prime;
  std::optional<std::string> a;
  std::optional<std::string> a_prime;
  double value = 0.0;
};

// Target-population counterfactual contrasts for every ordered pair of
// arms (and of joint assignment/receipt pairs when adherence is modeled).
struct SimTruth {
  std::vector<TruthEntry> itt;
  std::vector<TruthEntry> per_protocol;
  std::vector<std::size_t> stratum_sizes;

  double effect(std::string_view z, std::string_view z_prime) const;
  double per_protocol_effect(std::string_view z, std::string_view a, std::string_view z_prime,
                             std::string_view a_prime) const;
  std::string to_json() const;
};

struct Simulated {
  CompositeDataset data;
  SimTruth truth;
};

// Largest-remainder apportionment of n over the shares.
std::vector<std::size_t> apportion(const std::vector<double>& shares, std::size_t n);

SimTruth world_truth(const SimWorld& world);
Simulated simulate(const SimWorld& world);
// Same world, explicit size and seed.
Simulated simulate(const SimWorld& world, std::size_t n, std::uint64_t seed);

enum class Functional { psi_outcome, psi_weighting, phi_outcome, phi_weighting, theta, lambda, pp_effect };
enum class ComputedBy { population, empirical };

std::string_view functional_name(Functional f) noexcept;

struct OracleQuery {
  Functional functional = Functional::psi_outcome;
  std::string z;
  std::string z_prime;
  int trial = 1;
  // Per-protocol functionals: received treatments.
  std::string a;
  std::string a_prime;
  // Pooled functionals; empty means all trials.
  std::vector<int> collection;
};

struct OracleResult {
  Functional functional = Functional::psi_outcome;
  double value = 0.0;
  ComputedBy computed_by = ComputedBy::empirical;
};

// Cell arithmetic on a discrete-covariate sample. `theta` is the single
// nested mean for (z, a) in `trial`; `pp_effect` the difference of two of
// them; `lambda` the weighting form of that difference over the collection.
// Throws EmptyCell.
OracleResult enumerate_functional(const CompositeDataset& data, const OracleQuery& query);

// Same functionals from the world's population law (discrete covariates).
OracleResult enumerate_functional(const SimWorld& world, const OracleQuery& query);

}  // namespace tmeta
