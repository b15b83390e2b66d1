#include "transport_meta/dataset.hpp"

#include "transport_meta/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace tmeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> sorted_labels(const std::vector<Row>& rows, bool received) {
  std::set<std::string> labels;
  for (const auto& r : rows) {
    const auto& v = received ? r.received : r.treatment;
    if (v) labels.insert(*v);
    if (!received && r.benchmark_treatment) labels.insert(*r.benchmark_treatment);
  }
  return {labels.begin(), labels.end()};
}

int code_of(const std::vector<std::string>& labels, const std::string& label) {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) fail(Errc::unknown_category, "label '" + label + "' not in label table");
  return static_cast<int>(it - labels.begin());
}

std::string row_tag(const Row& r, std::size_t i) {
  return "row " + std::to_string(i + 1) + (r.id.empty() ? "" : " (id " + r.id + ")");
}

}  // namespace

CompositeDataset CompositeDataset::from_rows(const std::vector<Row>& rows, const Options& options) {
  CompositeDataset d;
  d.covariate_names_ = options.covariate_names;
  d.post_names_ = options.post_covariate_names;
  d.has_adherence_ = options.has_adherence;
  d.treatment_labels_ =
      options.treatment_labels.empty() ? sorted_labels(rows, false) : options.treatment_labels;
  d.received_labels_ =
      options.received_labels.empty() ? sorted_labels(rows, true) : options.received_labels;

  const std::size_t n = rows.size();
  const auto p = static_cast<Eigen::Index>(d.covariate_names_.size());
  const auto q = static_cast<Eigen::Index>(d.post_names_.size());
  d.ids_.reserve(n);
  d.stratum_.reserve(n);
  d.treatment_.reserve(n);
  d.outcome_.reserve(n);
  d.received_.reserve(n);
  d.bench_treatment_.reserve(n);
  d.bench_outcome_.reserve(n);
  d.x_.resize(static_cast<Eigen::Index>(n), p);
  d.l_.setZero(static_cast<Eigen::Index>(n), q);

  int max_s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Row& r = rows[i];
    const auto ei = static_cast<Eigen::Index>(i);
    if (r.stratum < 0) fail(Errc::non_numeric_value, row_tag(r, i) + ": stratum must be >= 0");
    if (static_cast<Eigen::Index>(r.covariates.size()) != p)
      fail(Errc::dimension_mismatch, row_tag(r, i) + ": covariate vector has wrong length");
    for (Eigen::Index j = 0; j < p; ++j) {
      const double v = r.covariates[static_cast<std::size_t>(j)];
      if (!std::isfinite(v))
        fail(Errc::missing_covariate,
             row_tag(r, i) + ": missing covariate '" + d.covariate_names_[static_cast<std::size_t>(j)] + "'");
      d.x_(ei, j) = v;
    }
    max_s = std::max(max_s, r.stratum);
    d.ids_.push_back(r.id);
    d.stratum_.push_back(r.stratum);
    d.bench_treatment_.push_back(kAbsent);
    d.bench_outcome_.push_back(kNaN);

    if (r.stratum == 0) {
      if (r.treatment || r.outcome || r.received || !r.post_covariates.empty())
        fail(Errc::target_row_has_outcome,
             row_tag(r, i) + ": target (S=0) row carries trial-only values");
      d.treatment_.push_back(kAbsent);
      d.outcome_.push_back(kNaN);
      d.received_.push_back(kAbsent);
      if (r.benchmark_treatment && r.benchmark_outcome) {
        d.has_benchmark_ = true;
        d.bench_treatment_.back() = code_of(d.treatment_labels_, *r.benchmark_treatment);
        d.bench_outcome_.back() = *r.benchmark_outcome;
      }
      continue;
    }

    if (!r.treatment || !r.outcome || !std::isfinite(*r.outcome))
      fail(Errc::trial_row_missing_outcome, row_tag(r, i) + ": trial row lacks Z or Y");
    d.treatment_.push_back(code_of(d.treatment_labels_, *r.treatment));
    d.outcome_.push_back(*r.outcome);
    if (d.has_adherence_) {
      if (!r.received) fail(Errc::missing_adherence, row_tag(r, i) + ": trial row lacks A");
      d.received_.push_back(code_of(d.received_labels_, *r.received));
      if (static_cast<Eigen::Index>(r.post_covariates.size()) != q)
        fail(Errc::missing_covariate, row_tag(r, i) + ": post-assignment covariates incomplete");
      for (Eigen::Index j = 0; j < q; ++j) {
        const double v = r.post_covariates[static_cast<std::size_t>(j)];
        if (!std::isfinite(v))
          fail(Errc::missing_covariate,
               row_tag(r, i) + ": missing covariate '" + d.post_names_[static_cast<std::size_t>(j)] + "'");
        d.l_(ei, j) = v;
      }
    } else {
      d.received_.push_back(kAbsent);
    }
  }
  d.m_ = max_s;
  d.index_strata();

  if (d.by_stratum_[0].empty()) fail(Errc::empty_stratum, "no target (S=0) rows");
  for (int s = 1; s <= d.m_; ++s)
    if (d.by_stratum_[static_cast<std::size_t>(s)].empty())
      fail(Errc::empty_stratum, "trial " + std::to_string(s) + " has no rows");
  return d;
}

void CompositeDataset::index_strata() {
  by_stratum_.assign(static_cast<std::size_t>(m_) + 1, {});
  pooled_.clear();
  for (std::size_t i = 0; i < stratum_.size(); ++i) {
    by_stratum_[static_cast<std::size_t>(stratum_[i])].push_back(i);
    if (stratum_[i] != 0) pooled_.push_back(i);
  }
}

std::size_t CompositeDataset::stratum_size(int s) const {
  if (s < 0 || s > m_) fail(Errc::unknown_stratum, "unknown stratum " + std::to_string(s));
  return by_stratum_[static_cast<std::size_t>(s)].size();
}

std::vector<int> CompositeDataset::trials() const {
  std::vector<int> out;
  for (int s = 1; s <= m_; ++s) out.push_back(s);
  return out;
}

std::optional<int> CompositeDataset::treatment_code(std::string_view label) const {
  auto it = std::find(treatment_labels_.begin(), treatment_labels_.end(), label);
  if (it == treatment_labels_.end()) return std::nullopt;
  return static_cast<int>(it - treatment_labels_.begin());
}

std::optional<int> CompositeDataset::received_code(std::string_view label) const {
  auto it = std::find(received_labels_.begin(), received_labels_.end(), label);
  if (it == received_labels_.end()) return std::nullopt;
  return static_cast<int>(it - received_labels_.begin());
}

Row CompositeDataset::row(std::size_t i) const {
  Row r;
  const auto ei = static_cast<Eigen::Index>(i);
  r.id = ids_[i];
  r.stratum = stratum_[i];
  r.covariates.resize(static_cast<std::size_t>(x_.cols()));
  for (Eigen::Index j = 0; j < x_.cols(); ++j) r.covariates[static_cast<std::size_t>(j)] = x_(ei, j);
  if (treatment_[i] != kAbsent) {
    r.treatment = treatment_labels_[static_cast<std::size_t>(treatment_[i])];
    r.outcome = outcome_[i];
  }
  if (received_[i] != kAbsent) {
    r.received = received_labels_[static_cast<std::size_t>(received_[i])];
    r.post_covariates.resize(static_cast<std::size_t>(l_.cols()));
    for (Eigen::Index j = 0; j < l_.cols(); ++j) r.post_covariates[static_cast<std::size_t>(j)] = l_(ei, j);
  }
  if (bench_treatment_[i] != kAbsent) {
    r.benchmark_treatment = treatment_labels_[static_cast<std::size_t>(bench_treatment_[i])];
    r.benchmark_outcome = bench_outcome_[i];
  }
  return r;
}

std::vector<Row> CompositeDataset::rows() const {
  std::vector<Row> out;
  out.reserve(n());
  for (std::size_t i = 0; i < n(); ++i) out.push_back(row(i));
  return out;
}

CompositeDataset::Options CompositeDataset::options() const {
  return {covariate_names_, post_names_, has_adherence_, treatment_labels_, received_labels_};
}

RowIndices CompositeDataset::view(const StratumSelector& selector) const {
  switch (selector.kind) {
    case StratumSelector::Kind::target:
      return by_stratum_[0];
    case StratumSelector::Kind::pooled_trials:
      return pooled_;
    case StratumSelector::Kind::trial:
      if (selector.trial < 1 || selector.trial > m_)
        fail(Errc::unknown_stratum, "unknown trial " + std::to_string(selector.trial));
      return by_stratum_[static_cast<std::size_t>(selector.trial)];
  }
  fail(Errc::unknown_stratum, "bad selector");
}

CompositeDataset CompositeDataset::subset(std::span<const std::size_t> indices) const {
  CompositeDataset d;
  d.m_ = m_;
  d.covariate_names_ = covariate_names_;
  d.post_names_ = post_names_;
  d.has_adherence_ = has_adherence_;
  d.has_benchmark_ = has_benchmark_;
  d.treatment_labels_ = treatment_labels_;
  d.received_labels_ = received_labels_;
  const auto k = static_cast<Eigen::Index>(indices.size());
  d.x_.resize(k, x_.cols());
  d.l_.resize(k, l_.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    const auto er = static_cast<Eigen::Index>(r);
    const auto ei = static_cast<Eigen::Index>(i);
    d.ids_.push_back(ids_[i]);
    d.stratum_.push_back(stratum_[i]);
    d.treatment_.push_back(treatment_[i]);
    d.outcome_.push_back(outcome_[i]);
    d.received_.push_back(received_[i]);
    d.bench_treatment_.push_back(bench_treatment_[i]);
    d.bench_outcome_.push_back(bench_outcome_[i]);
    d.x_.row(er) = x_.row(ei);
    d.l_.row(er) = l_.row(ei);
  }
  d.index_strata();
  return d;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

double parse_double(const std::string& s, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v))
    fail(Errc::non_numeric_value,
         "line " + std::to_string(line) + ", column '" + column + "': not a number: '" + s + "'");
  return v;
}

int parse_stratum(const std::string& s, std::size_t line, const std::string& column) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 0)
    fail(Errc::non_numeric_value,
         "line " + std::to_string(line) + ", column '" + column + "': not a stratum label: '" + s + "'");
  return v;
}

}  // namespace

CompositeDataset ingest_csv_text(std::string_view text, const SchemaConfig& schema) {
  std::vector<std::vector<std::string>> records;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!trim(line).empty()) records.push_back(split_csv_line(line));
    pos = nl + 1;
  }
  if (records.empty()) fail(Errc::io, "CSV input is empty");

  const auto& header = records.front();
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) col.emplace(header[j], j);
  auto require = [&](const std::string& name) -> std::size_t {
    auto it = col.find(name);
    if (it == col.end()) fail(Errc::missing_column, "missing column '" + name + "'");
    return it->second;
  };

  const std::size_t c_id = col.count(schema.id) ? col.at(schema.id) : SIZE_MAX;
  const std::size_t c_s = require(schema.stratum);
  const std::size_t c_z = require(schema.treatment);
  const std::size_t c_y = require(schema.outcome);
  const std::size_t c_a = schema.received ? require(*schema.received) : SIZE_MAX;
  std::vector<std::size_t> c_x, c_l;
  for (const auto& name : schema.covariates) c_x.push_back(require(name));
  for (const auto& name : schema.post_covariates) c_l.push_back(require(name));

  const std::set<std::string> categorical(schema.categorical.begin(), schema.categorical.end());
  for (const auto& c : categorical)
    if (std::find(schema.covariates.begin(), schema.covariates.end(), c) == schema.covariates.end())
      fail(Errc::config, "categorical column '" + c + "' is not a listed covariate");

  // Levels of categorical covariates, lexicographic.
  std::map<std::string, std::vector<std::string>> levels;
  for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
    const auto& name = schema.covariates[k];
    if (!categorical.count(name)) continue;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < records.size(); ++r) {
      const auto& rec = records[r];
      if (c_x[k] < rec.size() && !rec[c_x[k]].empty()) seen.insert(rec[c_x[k]]);
    }
    levels[name] = {seen.begin(), seen.end()};
  }

  std::vector<std::string> covariate_names;
  for (const auto& name : schema.covariates) {
    if (categorical.count(name)) {
      const auto& lv = levels[name];
      for (std::size_t j = 1; j < lv.size(); ++j) covariate_names.push_back(name + "[" + lv[j] + "]");
    } else {
      covariate_names.push_back(name);
    }
  }

  std::vector<Row> rows;
  rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t line = r + 1;
    if (rec.size() != header.size())
      fail(Errc::io, "line " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                         " fields, found " + std::to_string(rec.size()));
    Row row;
    row.id = c_id == SIZE_MAX ? std::to_string(r) : rec[c_id];
    if (rec[c_s].empty()) fail(Errc::non_numeric_value, "line " + std::to_string(line) + ": empty stratum");
    row.stratum = parse_stratum(rec[c_s], line, schema.stratum);

    for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
      const auto& name = schema.covariates[k];
      const std::string& cell = rec[c_x[k]];
      if (cell.empty())
        fail(Errc::missing_covariate, "line " + std::to_string(line) + ": missing covariate '" + name + "'");
      if (categorical.count(name)) {
        const auto& lv = levels[name];
        for (std::size_t j = 1; j < lv.size(); ++j) row.covariates.push_back(cell == lv[j] ? 1.0 : 0.0);
      } else {
        row.covariates.push_back(parse_double(cell, line, name));
      }
    }

    const std::string& z = rec[c_z];
    const std::string& y = rec[c_y];
    if (row.stratum == 0) {
      if (schema.target_benchmark) {
        if (!z.empty() && !y.empty()) {
          row.benchmark_treatment = z;
          row.benchmark_outcome = parse_double(y, line, schema.outcome);
        }
      } else if (!z.empty() || !y.empty()) {
        fail(Errc::target_row_has_outcome,
             "line " + std::to_string(line) + ": target (S=0) row has a nonempty Z or Y cell");
      }
      if (c_a != SIZE_MAX && !rec[c_a].empty())
        fail(Errc::target_row_has_outcome, "line " + std::to_string(line) + ": target (S=0) row has an A value");
      for (std::size_t k = 0; k < c_l.size(); ++k)
        if (!rec[c_l[k]].empty())
          fail(Errc::target_row_has_outcome,
               "line " + std::to_string(line) + ": target (S=0) row has a post-assignment covariate");
    } else {
      if (z.empty() || y.empty())
        fail(Errc::trial_row_missing_outcome,
             "line " + std::to_string(line) + ": trial row has an empty Z or Y cell");
      row.treatment = z;
      row.outcome = parse_double(y, line, schema.outcome);
      if (c_a != SIZE_MAX) {
        if (rec[c_a].empty())
          fail(Errc::missing_adherence, "line " + std::to_string(line) + ": trial row has an empty A cell");
        row.received = rec[c_a];
        for (std::size_t k = 0; k < c_l.size(); ++k) {
          const std::string& cell = rec[c_l[k]];
          if (cell.empty())
            fail(Errc::missing_covariate, "line " + std::to_string(line) + ": missing covariate '" +
                                              schema.post_covariates[k] + "'");
          row.post_covariates.push_back(parse_double(cell, line, schema.post_covariates[k]));
        }
      }
    }
    rows.push_back(std::move(row));
  }

  CompositeDataset::Options opts;
  opts.covariate_names = covariate_names;
  opts.post_covariate_names = schema.post_covariates;
  opts.has_adherence = schema.received.has_value();
  return CompositeDataset::from_rows(rows, opts);
}

CompositeDataset ingest_csv(const std::filesystem::path& path, const SchemaConfig& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ingest_csv_text(ss.str(), schema);
}

}  // namespace tmeta

namespace tmeta {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string write_csv_text(const CompositeDataset& data) {
  std::string out = "id,S,Z,Y";
  for (const auto& name : data.covariate_names()) out += "," + name;
  if (data.has_adherence()) {
    out += ",A";
    for (const auto& name : data.post_covariate_names()) out += "," + name;
  }
  out += '\n';
  const auto& x = data.covariates();
  const auto& l = data.post_covariates();
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out += data.id(i) + "," + std::to_string(data.stratum(i)) + ",";
    if (data.has_outcome(i)) {
      out += data.treatment_labels()[static_cast<std::size_t>(data.treatment(i))] + "," + format_double(data.outcome(i));
    } else if (data.has_benchmark() && data.benchmark_treatment(i) != kAbsent) {
      out += data.treatment_labels()[static_cast<std::size_t>(data.benchmark_treatment(i))] + "," +
             format_double(data.benchmark_outcome(i));
    } else {
      out += ",";
    }
    for (Eigen::Index k = 0; k < x.cols(); ++k) out += "," + format_double(x(r, k));
    if (data.has_adherence()) {
      out += ",";
      if (data.has_outcome(i)) out += data.received_labels()[static_cast<std::size_t>(data.received(i))];
      for (Eigen::Index k = 0; k < l.cols(); ++k) {
        out += ",";
        if (data.has_outcome(i)) out += format_double(l(r, k));
      }
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const CompositeDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io, "cannot write '" + path.string() + "'");
  out << write_csv_text(data);
  if (!out) fail(Errc::io, "write failed for '" + path.string() + "'");
}

}  // namespace tmeta
