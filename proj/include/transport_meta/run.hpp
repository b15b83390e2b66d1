#pragma once

#include "transport_meta/dataset.hpp"
#include "transport_meta/diagnostics.hpp"
#include "transport_meta/estimate.hpp"
#include "transport_meta/oracle.hpp"
#include "transport_meta/per_protocol.hpp"
#include "transport_meta/results.hpp"

#include <toml.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tmeta {

std::string_view tool_version() noexcept;

enum class VarianceMethod { sandwich, bootstrap, both };

// Working-model term lists; unset means main effects of every covariate.
struct ModelTerms {
  std::optional<std::vector<std::string>> outcome;
  std::optional<std::vector<std::string>> participation;
  std::optional<std::vector<std::string>> tau;
  std::optional<std::vector<std::string>> treatment;
  std::optional<std::vector<std::string>> inner;
  std::optional<std::vector<std::string>> outer;
  std::optional<std::vector<std::string>> adherence;
  std::optional<std::vector<std::string>> falsification;
};

struct RunConfig {
  std::string analysis;
  std::filesystem::path data_path;
  SchemaConfig schema;
  Contrast contrast;
  std::optional<int> trial;
  std::optional<std::string> a;
  std::optional<std::string> a_prime;
  std::vector<int> collection;
  bool restrict_collection = false;
  double level = 0.95;

  ModelTerms terms;
  bool treatment_known = false;
  std::map<std::string, double> known;
  std::map<int, std::map<std::string, double>> known_by_trial;
  bool adherence_trial_indicators = true;
  bool adherence_per_trial = false;

  VarianceMethod variance = VarianceMethod::sandwich;
  std::size_t replicates = 1000;
  std::optional<std::uint64_t> seed;
  bool stratified = true;
  std::size_t threads = 1;
  bool reproducible = true;

  WeightOptions weights;
  FalsificationOptions falsification;
  std::vector<BiasFunction> bias;

  std::filesystem::path world_path;
  std::optional<std::size_t> sim_n;

  std::filesystem::path results_path;
  std::filesystem::path out_dir = "transport-meta-out";

  // Resolved settings, without paths' base directory or thread count.
  nlohmann::json echo() const;
};

// Raw TOML settings plus command-line overrides; resolved on demand.
class ConfigSource {
 public:
  ConfigSource() = default;
  static ConfigSource from_file(const std::filesystem::path& path);
  static ConfigSource from_string(std::string_view text, const std::filesystem::path& base_dir = {});

  // Dotted key such as "analysis.z" or "variance.replicates"; the value is
  // parsed according to the key's type. Unknown keys raise ConfigError.
  void set(std::string_view key, std::string_view value);

  RunConfig resolve() const;

 private:
  toml::table table_;
  std::filesystem::path base_dir_;
};

// Data loaded per the config's schema.
CompositeDataset load_data(const RunConfig& config);

ResultsDocument run_analysis(const RunConfig& config, const CompositeDataset& data);
// Loads data (or the results file, for "report") and runs.
ResultsDocument run(const RunConfig& config);

// Writes data.csv and truth.json for the configured world into out_dir.
SimTruth run_simulation(const RunConfig& config);

}  // namespace tmeta
