#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tmeta {

inline constexpr int kAbsent = -1;

// Column mapping for CSV ingestion. Categorical covariates are expanded to
// indicator columns named `name[level]`, levels in lexicographic order with
// the first level dropped as reference.
struct SchemaConfig {
  std::string id = "id";
  std::string stratum = "S";
  std::string treatment = "Z";
  std::string outcome = "Y";
  std::vector<std::string> covariates;
  std::vector<std::string> categorical;
  std::optional<std::string> received;
  std::vector<std::string> post_covariates;
  // Emulation datasets (a multi-center trial re-purposed as a meta-analysis)
  // carry Z/Y for the target center. They are kept in separate benchmark
  // columns that no transport estimator reads.
  bool target_benchmark = false;
};

// One individual, with treatment labels in their original string form.
struct Row {
  std::string id;
  int stratum = 0;
  std::optional<std::string> treatment;
  std::optional<double> outcome;
  std::vector<double> covariates;
  std::optional<std::string> received;
  std::vector<double> post_covariates;
  std::optional<std::string> benchmark_treatment;
  std::optional<double> benchmark_outcome;
};

struct StratumSelector {
  enum class Kind { trial, pooled_trials, target };
  Kind kind = Kind::target;
  int trial = 0;

  static StratumSelector target() { return {Kind::target, 0}; }
  static StratumSelector pooled() { return {Kind::pooled_trials, 0}; }
  static StratumSelector of_trial(int s) { return {Kind::trial, s}; }
};

using RowIndices = std::span<const std::size_t>;

// Composite data: trials S = 1..m stacked with the target sample S = 0.
// Immutable after construction.
class CompositeDataset {
 public:
  struct Options {
    std::vector<std::string> covariate_names;
    std::vector<std::string> post_covariate_names;
    bool has_adherence = false;
    // Explicit label order; empty means "sorted labels that occur".
    std::vector<std::string> treatment_labels;
    std::vector<std::string> received_labels;
  };

  static CompositeDataset from_rows(const std::vector<Row>& rows, const Options& options);

  std::size_t n() const noexcept { return stratum_.size(); }
  int m() const noexcept { return m_; }
  std::size_t stratum_size(int s) const;
  std::vector<int> trials() const;

  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  const std::vector<std::string>& post_covariate_names() const noexcept { return post_names_; }
  bool has_adherence() const noexcept { return has_adherence_; }
  bool has_benchmark() const noexcept { return has_benchmark_; }

  const std::string& id(std::size_t i) const { return ids_[i]; }
  int stratum(std::size_t i) const { return stratum_[i]; }
  int treatment(std::size_t i) const { return treatment_[i]; }
  int received(std::size_t i) const { return received_[i]; }
  bool has_outcome(std::size_t i) const { return treatment_[i] != kAbsent; }
  double outcome(std::size_t i) const { return outcome_[i]; }
  int benchmark_treatment(std::size_t i) const { return bench_treatment_[i]; }
  double benchmark_outcome(std::size_t i) const { return bench_outcome_[i]; }

  const Eigen::MatrixXd& covariates() const noexcept { return x_; }
  const Eigen::MatrixXd& post_covariates() const noexcept { return l_; }

  const std::vector<std::string>& treatment_labels() const noexcept { return treatment_labels_; }
  const std::vector<std::string>& received_labels() const noexcept { return received_labels_; }
  std::optional<int> treatment_code(std::string_view label) const;
  std::optional<int> received_code(std::string_view label) const;

  Row row(std::size_t i) const;
  std::vector<Row> rows() const;
  Options options() const;

  // Non-copying, read-only index views.
  RowIndices view(const StratumSelector& selector) const;

  // New dataset made of the given rows (repeats allowed); label tables are
  // inherited so codes stay stable.
  CompositeDataset subset(std::span<const std::size_t> indices) const;

 private:
  CompositeDataset() = default;
  void index_strata();

  int m_ = 0;
  std::vector<std::string> covariate_names_;
  std::vector<std::string> post_names_;
  bool has_adherence_ = false;
  bool has_benchmark_ = false;
  std::vector<std::string> treatment_labels_;
  std::vector<std::string> received_labels_;

  std::vector<std::string> ids_;
  std::vector<int> stratum_;
  std::vector<int> treatment_;
  std::vector<double> outcome_;
  std::vector<int> received_;
  std::vector<int> bench_treatment_;
  std::vector<double> bench_outcome_;
  Eigen::MatrixXd x_;
  Eigen::MatrixXd l_;

  std::vector<std::vector<std::size_t>> by_stratum_;
  std::vector<std::size_t> pooled_;
};

CompositeDataset ingest_csv(const std::filesystem::path& path, const SchemaConfig& schema);
CompositeDataset ingest_csv_text(std::string_view text, const SchemaConfig& schema);

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Columns id,S,Z,Y, covariates, then A and post-assignment covariates when
// present. Readable back with the default schema plus the listed columns.
std::string write_csv_text(const CompositeDataset& data);
void write_csv(const std::filesystem::path& path, const CompositeDataset& data);

}  // namespace tmeta
