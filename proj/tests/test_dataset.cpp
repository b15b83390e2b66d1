#include "support.hpp"

#include "transport_meta/dataset.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace tmeta;

namespace {

SchemaConfig x_schema() {
  SchemaConfig s;
  s.covariates = {"x"};
  return s;
}

const char* kSixRows =
    "id,S,Z,Y,x\n"
    "a,0,,,0.5\n"
    "b,0,,,1.5\n"
    "c,0,,,2\n"
    "d,1,1,3,0\n"
    "e,1,0,1,1\n"
    "f,1,1,4,2\n";

// Multicenter-shaped file: 202 target rows and nine centers.
std::string multicenter_text() {
  const int sizes[] = {202, 70, 81, 133, 90, 88, 75, 92, 64, 79};
  std::string text = "id,S,Z,Y,x\n";
  int id = 0;
  for (int s = 0; s < 10; ++s)
    for (int i = 0; i < sizes[s]; ++i) {
      const std::string x = std::to_string((id * 7) % 5);
      if (s == 0) text += std::to_string(id) + ",0,,," + x + "\n";
      else text += std::to_string(id) + "," + std::to_string(s) + "," + (i % 2 ? "1" : "0") + ",1.5," + x + "\n";
      ++id;
    }
  return text;
}

}  // namespace

TEST_CASE("six-row file counts") {
  const auto d = ingest_csv_text(kSixRows, x_schema());
  CHECK(d.n() == 6);
  CHECK(d.m() == 1);
  CHECK(d.stratum_size(0) == 3);
  CHECK(d.stratum_size(1) == 3);
  CHECK(d.treatment_labels() == std::vector<std::string>{"0", "1"});
  CHECK(d.covariates()(1, 0) == 1.5);
  CHECK_FALSE(d.has_outcome(0));
  CHECK(d.has_outcome(3));
  CHECK(d.outcome(5) == 4.0);
}

TEST_CASE("target selector returns target rows") {
  const auto d = ingest_csv_text(kSixRows, x_schema());
  const auto v = d.view(StratumSelector::target());
  CHECK(std::vector<std::size_t>(v.begin(), v.end()) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("multicenter-shaped counts and views") {
  const auto d = ingest_csv_text(multicenter_text(), x_schema());
  CHECK(d.n() == 974);
  CHECK(d.m() == 9);
  CHECK(d.stratum_size(0) == 202);
  std::size_t trials = 0;
  for (int s = 1; s <= 9; ++s) trials += d.stratum_size(s);
  CHECK(trials == 772);
  CHECK(d.view(StratumSelector::of_trial(3)).size() == 133);
  CHECK(d.view(StratumSelector::pooled()).size() == 772);
}

TEST_CASE("pooled selector is the union of trials") {
  const auto d = testing::load_fixture("d2.csv");
  const auto p = d.view(StratumSelector::pooled());
  const auto t1 = d.view(StratumSelector::of_trial(1));
  const auto t2 = d.view(StratumSelector::of_trial(2));
  std::set<std::size_t> u(t1.begin(), t1.end());
  u.insert(t2.begin(), t2.end());
  CHECK(std::set<std::size_t>(p.begin(), p.end()) == u);
  CHECK(p.size() == t1.size() + t2.size());
  CHECK(ERRC_OF(d.view(StratumSelector::of_trial(3))) == Errc::unknown_stratum);
}

TEST_CASE("ingest errors") {
  const auto schema = x_schema();
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x\n1,0,,3.2,1\n2,1,1,2,0\n", schema)) == Errc::target_row_has_outcome);
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y\n1,0,,\n2,1,1,2\n", schema)) == Errc::missing_column);
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x\n1,0,,,abc\n2,1,1,2,0\n", schema)) == Errc::non_numeric_value);
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x\n1,0,,,\n2,1,1,2,0\n", schema)) == Errc::missing_covariate);
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x\n1,0,,,1\n2,1,1,,0\n", schema)) == Errc::trial_row_missing_outcome);
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x\n2,1,1,2,0\n", schema)) == Errc::empty_stratum);
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x\n1,0,,,1\n2,2,1,2,0\n", schema)) == Errc::empty_stratum);
  CHECK(ERRC_OF(ingest_csv_text("", schema)) == Errc::io);
  CHECK(ERRC_OF(ingest_csv(testing::fixture("absent.csv"), schema)) == Errc::io);

  auto adh = schema;
  adh.received = "A";
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,x,A\n1,0,,,1,\n2,1,1,2,0,\n", adh)) == Errc::missing_adherence);
}

TEST_CASE("benchmark columns on target rows") {
  auto schema = x_schema();
  schema.target_benchmark = true;
  const auto d = ingest_csv_text("id,S,Z,Y,x\n1,0,1,5,1\n2,0,0,2,0\n3,1,1,2,0\n4,1,0,1,1\n", schema);
  CHECK(d.has_benchmark());
  CHECK_FALSE(d.has_outcome(0));
  CHECK(d.benchmark_outcome(0) == 5.0);
  CHECK(d.treatment_labels()[d.benchmark_treatment(1)] == "0");
}

TEST_CASE("categorical expansion drops the first level") {
  SchemaConfig schema;
  schema.covariates = {"site", "age"};
  schema.categorical = {"site"};
  const auto d = ingest_csv_text(
      "id,S,Z,Y,site,age\n1,0,,,b,30\n2,0,,,c,40\n3,1,1,2,a,50\n4,1,0,1,c,60\n", schema);
  CHECK(d.covariate_names() == std::vector<std::string>{"site[b]", "site[c]", "age"});
  CHECK(d.covariates().row(0).transpose() == Eigen::Vector3d(1, 0, 30));
  CHECK(d.covariates().row(2).transpose() == Eigen::Vector3d(0, 0, 50));
  CHECK(d.covariates().row(3).transpose() == Eigen::Vector3d(0, 1, 60));

  schema.categorical = {"other"};
  CHECK(ERRC_OF(ingest_csv_text("id,S,Z,Y,site,age\n1,0,,,b,30\n3,1,1,2,a,50\n", schema)) == Errc::config);
}

TEST_CASE("treatment labels sort lexicographically") {
  const auto d = ingest_csv_text("S,Z,Y,x\n0,,,0\n1,drug,1,0\n1,ctrl,2,1\n1,b,3,1\n", x_schema());
  CHECK(d.treatment_labels() == std::vector<std::string>{"b", "ctrl", "drug"});
  CHECK(d.treatment_code("drug") == 2);
  CHECK_FALSE(d.treatment_code("none").has_value());
  CHECK(d.id(1) == "2");
}

TEST_CASE("CSV round trip") {
  for (const char* name : {"d1.csv", "d2.csv", "d3.csv"}) {
    CAPTURE(name);
    const auto d = testing::load_fixture(name);
    const std::string text = write_csv_text(d);
    SchemaConfig schema = x_schema();
    if (d.has_adherence()) {
      schema.received = "A";
      schema.post_covariates = {"l"};
    }
    const auto back = ingest_csv_text(text, schema);
    REQUIRE(back.n() == d.n());
    CHECK(back.covariates() == d.covariates());
    CHECK(back.post_covariates() == d.post_covariates());
    for (std::size_t i = 0; i < d.n(); ++i) {
      CHECK(back.id(i) == d.id(i));
      CHECK(back.stratum(i) == d.stratum(i));
      CHECK(back.treatment(i) == d.treatment(i));
      if (d.has_outcome(i)) CHECK(back.outcome(i) == d.outcome(i));
      if (d.has_adherence()) CHECK(back.received(i) == d.received(i));
    }
    CHECK(write_csv_text(back) == text);
  }
}

TEST_CASE("format_double round trips awkward values") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 0.0, 1e21}) {
    const auto s = format_double(v);
    CHECK(std::stod(s) == v);
  }
}

TEST_CASE("subset keeps label codes and allows repeats") {
  const auto d = testing::load_fixture("d1.csv");
  const std::vector<std::size_t> idx{0, 11, 11, 4};
  const auto s = d.subset(idx);
  CHECK(s.n() == 4);
  CHECK(s.treatment_labels() == d.treatment_labels());
  CHECK(s.outcome(1) == d.outcome(11));
  CHECK(s.outcome(2) == d.outcome(11));
  CHECK(s.stratum_size(1) == 3);
}

TEST_CASE("from_rows rejects ragged covariates") {
  std::vector<Row> rows(2);
  rows[0].stratum = 0;
  rows[0].covariates = {1.0};
  rows[1].stratum = 1;
  rows[1].treatment = "1";
  rows[1].outcome = 2.0;
  rows[1].covariates = {1.0, 2.0};
  CompositeDataset::Options o;
  o.covariate_names = {"x"};
  CHECK(ERRC_OF(CompositeDataset::from_rows(rows, o)) == Errc::dimension_mismatch);
}
