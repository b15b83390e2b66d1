#include "support.hpp"

#include "transport_meta/oracle.hpp"
#include "transport_meta/per_protocol.hpp"
#include "transport_meta/transport.hpp"

#include <doctest.h>

#include <random>

using namespace tmeta;

namespace {

TreatmentModelSpec estimated_x() {
  TreatmentModelSpec t;
  t.design = DesignSpec::parse({"x"});
  return t;
}

AdherenceModelSpec saturated_adherence() {
  AdherenceModelSpec a;
  a.design = DesignSpec::parse({"x", "l", "x:l"});
  return a;
}

// Copy of an ITT dataset where everyone receives the assigned arm and no
// post-assignment covariate is recorded.
CompositeDataset full_adherence(const CompositeDataset& d) {
  auto rows = d.rows();
  for (auto& r : rows) r.received = r.treatment;
  auto o = d.options();
  o.has_adherence = true;
  o.received_labels = o.treatment_labels;
  return CompositeDataset::from_rows(rows, o);
}

}  // namespace

TEST_CASE("D3 nested regression matches cell enumeration") {
  const auto d = testing::load_fixture("d3.csv");
  const auto raw = testing::read_raw(testing::fixture("d3.csv"));
  const double oracle = testing::pp_theta(raw, 1, 1, 1) - testing::pp_theta(raw, 1, 0, 0);
  const JointContrast jc{"1", "1", "0", "0"};
  const auto te = estimate_pp_te(d, 1, jc, DesignSpec::parse({"x", "l", "x:l"}), DesignSpec::parse({"x"}));
  CHECK(std::abs(te.estimate.point - oracle) < 1e-10);
  CHECK(te.estimate.a == "1");
  CHECK(te.estimate.a_prime == "0");

  const auto w = estimate_pp_w(d, jc, DesignSpec::parse({"x"}), estimated_x(), saturated_adherence());
  CHECK(std::abs(w.point - oracle) < 1e-10);
  CHECK(std::abs(w.point - te.estimate.point) < 1e-10);
}

TEST_CASE("D3 other joint contrasts") {
  const auto d = testing::load_fixture("d3.csv");
  const auto raw = testing::read_raw(testing::fixture("d3.csv"));
  const JointContrast jc{"1", "0", "0", "1"};
  const double oracle = testing::pp_theta(raw, 1, 1, 0) - testing::pp_theta(raw, 1, 0, 1);
  const auto te = estimate_pp_te(d, 1, jc, DesignSpec::parse({"x", "l", "x:l"}), DesignSpec::parse({"x"}));
  CHECK(std::abs(te.estimate.point - oracle) < 1e-10);
}

TEST_CASE("self-comparison is rejected") {
  const auto d = testing::load_fixture("d3.csv");
  const JointContrast same{"1", "1", "1", "1"};
  CHECK(ERRC_OF(same.validate()) == Errc::invalid_contrast);
  CHECK(ERRC_OF(estimate_pp_te(d, 1, same, DesignSpec::parse({"x"}), DesignSpec::parse({"x"}))) ==
        Errc::invalid_contrast);
  CHECK(ERRC_OF(estimate_pp_w(d, same, DesignSpec::parse({"x"}), estimated_x(), saturated_adherence())) ==
        Errc::invalid_contrast);
}

TEST_CASE("per-protocol needs adherence data") {
  const auto d = testing::load_fixture("d2.csv");
  const JointContrast jc{"1", "1", "0", "0"};
  CHECK(ERRC_OF(estimate_pp_te(d, 1, jc, DesignSpec::parse({"x"}), DesignSpec::parse({"x"}))) ==
        Errc::missing_adherence);
}

TEST_CASE("full adherence collapses to the ITT estimators") {
  const auto d2 = testing::load_fixture("d2.csv");
  const auto d = full_adherence(d2);
  const JointContrast jc{"1", "1", "0", "0"};
  const Contrast c{"1", "0"};
  const auto x = DesignSpec::parse({"x"});
  for (int s = 1; s <= 2; ++s) {
    const auto pp = estimate_pp_te(d, s, jc, x, x);
    const auto itt = estimate_psi_te(d2, s, c, x);
    CHECK(std::abs(pp.estimate.point - itt.estimate.point) < 1e-10);
  }
  AdherenceModelSpec adh;
  adh.design = x;
  const auto ppw = estimate_pp_w(d, jc, x, estimated_x(), adh);
  const auto phiw = estimate_phi_w(d2, c, x, estimated_x());
  CHECK(std::abs(ppw.point - phiw.point) < 1e-10);
}

TEST_CASE("property: full adherence collapse on random data") {
  std::mt19937_64 gen(41);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;
  for (int rep = 0; rep < 6; ++rep) {
    std::vector<Row> rows;
    for (int s = 0; s <= 2; ++s)
      for (int i = 0; i < 80; ++i) {
        Row r;
        r.id = std::to_string(rows.size());
        r.stratum = s;
        const double x = nd(gen) + 0.3 * s;
        r.covariates = {x};
        if (s > 0) {
          const bool z = ud(gen) < 0.5;
          r.treatment = z ? "b" : "a";
          r.outcome = x + (z ? 1.0 + 0.5 * x : 0.0) + nd(gen);
        }
        rows.push_back(r);
      }
    CompositeDataset::Options o;
    o.covariate_names = {"x"};
    const auto itt = CompositeDataset::from_rows(rows, o);
    const auto pp = full_adherence(itt);
    const auto x = DesignSpec::parse({"x"});
    const JointContrast jc{"b", "b", "a", "a"};
    CHECK(std::abs(estimate_pp_te(pp, 2, jc, x, x).estimate.point -
                   estimate_psi_te(itt, 2, Contrast{"b", "a"}, x).estimate.point) < 1e-10);
    AdherenceModelSpec adh;
    adh.design = x;
    CHECK(std::abs(estimate_pp_w(pp, jc, x, estimated_x(), adh).point -
                   estimate_phi_w(itt, Contrast{"b", "a"}, x, estimated_x()).point) < 1e-10);
  }
}

TEST_CASE("empty adherence cell") {
  // Nobody assigned to 1 received 0 in trial 1.
  SchemaConfig schema = testing::x_schema();
  schema.received = "A";
  const auto d = ingest_csv_text(
      "S,Z,Y,x,A\n0,,,0,\n0,,,1,\n1,1,2,0,1\n1,1,3,1,1\n1,0,1,0,0\n1,0,2,1,1\n1,0,1,1,0\n", schema);
  const JointContrast jc{"1", "0", "0", "0"};
  CHECK(ERRC_OF(estimate_pp_te(d, 1, jc, DesignSpec::parse({"x"}), DesignSpec::parse({"x"}))) ==
        Errc::empty_adherence_cell);
}
