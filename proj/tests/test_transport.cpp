#include "support.hpp"

#include "transport_meta/inference.hpp"
#include "transport_meta/transport.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace tmeta;

namespace {

const Contrast k10{"1", "0"};

TreatmentModelSpec estimated_x() {
  TreatmentModelSpec t;
  t.design = DesignSpec::parse({"x"});
  return t;
}

TreatmentModelSpec known_half() {
  TreatmentModelSpec t;
  t.mode = TreatmentModelSpec::Mode::known;
  t.known = {{"0", 0.5}, {"1", 0.5}};
  return t;
}

// Random binary-X composite data with m trials; arm shares vary by trial.
CompositeDataset random_binary(std::mt19937_64& gen, int m, std::size_t per_stratum) {
  std::uniform_real_distribution<double> ud;
  std::normal_distribution<double> nd;
  std::vector<Row> rows;
  for (int s = 0; s <= m; ++s)
    for (std::size_t i = 0; i < per_stratum; ++i) {
      Row r;
      r.id = std::to_string(rows.size());
      r.stratum = s;
      const double x = ud(gen) < 0.3 + 0.1 * s ? 1.0 : 0.0;
      r.covariates = {x};
      if (s > 0) {
        // First four rows of every trial cover each (x, arm) cell.
        const bool z = i < 4 ? (i % 2 == 1) : ud(gen) < 0.4 + 0.05 * s;
        if (i < 4) r.covariates = {i < 2 ? 0.0 : 1.0};
        r.treatment = z ? "1" : "0";
        r.outcome = 1.0 + 2.0 * r.covariates[0] + (z ? 1.5 + r.covariates[0] : 0.0) + nd(gen);
      }
      rows.push_back(std::move(r));
    }
  CompositeDataset::Options o;
  o.covariate_names = {"x"};
  return CompositeDataset::from_rows(rows, o);
}

}  // namespace

TEST_CASE("D1 outcome and weighting forms match cell arithmetic") {
  const auto d = testing::load_fixture("d1.csv");
  const auto raw = testing::read_raw(testing::fixture("d1.csv"));
  const auto cells = testing::tabulate(raw);
  const double oracle_outcome = testing::psi_outcome(cells, 1, 1, 0);
  const double oracle_weight = testing::psi_weighting(raw, cells, 1, 1, 0);
  CHECK(oracle_outcome == doctest::Approx(3.25).epsilon(1e-14));
  CHECK(std::abs(oracle_outcome - oracle_weight) < 1e-12);

  const auto te = estimate_psi_te(d, 1, k10, DesignSpec::parse({"x"}));
  const auto w = estimate_psi_w(d, 1, k10, DesignSpec::parse({"x"}), estimated_x());
  CHECK(std::abs(te.estimate.point - 3.25) < 1e-10);
  CHECK(std::abs(w.point - 3.25) < 1e-10);
  CHECK(te.estimate.variance > 0.0);
  CHECK(te.estimate.ci_lower < 3.25);
  CHECK(te.estimate.ci_upper > 3.25);
  CHECK(te.estimate.source == "1");
  CHECK(te.estimate.n_used.at("target") == 4);
}

TEST_CASE("same arm on both sides gives zero") {
  const auto d = testing::load_fixture("d2.csv");
  const Contrast same{"1", "1"};
  CHECK(estimate_psi_te(d, 2, same, DesignSpec::parse({"x"})).estimate.point == 0.0);
  CHECK(estimate_psi_w(d, 2, same, DesignSpec::parse({"x"}), estimated_x()).point == 0.0);
  CHECK(unadjusted_trial_effect(d, 1, same).point == 0.0);
  CHECK(estimate_phi_te(d, same, DesignSpec::parse({"x"}), known_half()).estimate.point == 0.0);
  CHECK(estimate_phi_w(d, same, DesignSpec::parse({"x"}), known_half()).point == 0.0);
}

TEST_CASE("unadjusted arm means") {
  const auto d = ingest_csv_text("S,Z,Y,x\n0,,,0\n1,1,2,0\n1,1,4,0\n1,0,1,0\n", testing::x_schema());
  const auto e = unadjusted_trial_effect(d, 1, k10);
  CHECK(e.point == 2.0);
  CHECK(ERRC_OF(unadjusted_trial_effect(d, 1, Contrast{"1", "7"})) == Errc::invalid_contrast);
  CHECK(ERRC_OF(unadjusted_trial_effect(d, 1, Contrast{"1", "2"})) == Errc::invalid_contrast);
}

TEST_CASE("target equal to the trial's covariates gives the trial's standardized effect") {
  const auto d = ingest_csv_text(
      "S,Z,Y,x\n0,,,0\n0,,,0\n0,,,1\n0,,,1\n0,,,1\n"
      "1,1,3,0\n1,0,1,0\n1,1,7,1\n1,0,2,1\n1,1,9,1\n",
      testing::x_schema());
  // Trial: X=0 difference 2 (two rows), X=1 difference 8 - 2 = 6 (three rows).
  const double self = (2 * 2.0 + 3 * 6.0) / 5.0;
  CHECK(std::abs(estimate_psi_te(d, 1, k10, DesignSpec::parse({"x"})).estimate.point - self) < 1e-12);
}

TEST_CASE("transformed outcome") {
  const auto d = ingest_csv_text("S,Z,Y,x\n0,,,0\n1,1,4,0\n1,0,3,0\n1,2,5,0\n", testing::x_schema());
  auto known = known_half();
  known.known_by_trial[1] = {{"0", 0.25}, {"1", 0.5}, {"2", 0.25}};
  const auto u = build_transformed_outcome(d, k10, known);
  CHECK(u[0] == 0.0);
  CHECK(u[1] == 8.0);
  CHECK(u[2] == -12.0);
  CHECK(u[3] == 0.0);
}

TEST_CASE("D2 transformed outcome cell means equal cell mean differences") {
  const auto d = testing::load_fixture("d2.csv");
  const auto raw = testing::read_raw(testing::fixture("d2.csv"));
  const auto cells = testing::tabulate(raw);
  const auto u = build_transformed_outcome(d, k10, known_half());
  for (int s = 1; s <= 2; ++s)
    for (int x = 0; x <= 1; ++x) {
      double sum = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < d.n(); ++i)
        if (d.stratum(i) == s && d.covariates()(i, 0) == x) sum += u[i], ++n;
      // Arms are balanced in every D2 cell, so known 1:1 is exact.
      CHECK(cells.n(s, x, 1) == cells.n(s, x, 0));
      CHECK(std::abs(sum / n - (cells.mean(s, x, 1) - cells.mean(s, x, 0))) < 1e-12);
    }
}

TEST_CASE("D2 pooled estimators match cell arithmetic") {
  const auto d = testing::load_fixture("d2.csv");
  const auto raw = testing::read_raw(testing::fixture("d2.csv"));
  const auto cells = testing::tabulate(raw);
  const double eq3 = testing::phi_outcome(raw, cells, 1, 0);
  const double eq4 = testing::phi_weighting(raw, cells, 1, 0);
  CHECK(std::abs(eq3 - eq4) < 1e-12);
  CHECK(eq3 == doctest::Approx(139.0 / 30.0).epsilon(1e-14));

  for (const auto& treatment : {known_half(), estimated_x()}) {
    const auto te = estimate_phi_te(d, k10, DesignSpec::parse({"x"}), treatment);
    const auto w = estimate_phi_w(d, k10, DesignSpec::parse({"x"}), treatment);
    CHECK(std::abs(te.estimate.point - eq3) < 1e-10);
    CHECK(std::abs(w.point - eq3) < 1e-10);
    CHECK(te.estimate.source == "pooled");
  }
}

TEST_CASE("D2 single-trial estimators per trial") {
  const auto d = testing::load_fixture("d2.csv");
  const auto raw = testing::read_raw(testing::fixture("d2.csv"));
  const auto cells = testing::tabulate(raw);
  for (int s = 1; s <= 2; ++s) {
    const double oracle = testing::psi_outcome(cells, s, 1, 0);
    CHECK(std::abs(testing::psi_weighting(raw, cells, s, 1, 0) - oracle) < 1e-12);
    CHECK(std::abs(estimate_psi_te(d, s, k10, DesignSpec::parse({"x"})).estimate.point - oracle) < 1e-10);
    CHECK(std::abs(estimate_psi_w(d, s, k10, DesignSpec::parse({"x"}), estimated_x()).point - oracle) < 1e-10);
  }
}

TEST_CASE("single-trial collection: pooled equals single-trial") {
  const auto d = testing::load_fixture("d1.csv");
  const auto te = estimate_phi_te(d, k10, DesignSpec::parse({"x"}), estimated_x());
  const auto w = estimate_phi_w(d, k10, DesignSpec::parse({"x"}), estimated_x());
  CHECK(std::abs(te.estimate.point - 3.25) < 1e-10);
  CHECK(std::abs(w.point - 3.25) < 1e-10);
}

TEST_CASE("collection restriction") {
  const auto d = ingest_csv_text(
      "S,Z,Y,x\n0,,,0\n1,1,1,0\n1,0,2,0\n2,1,3,0\n2,1,4,1\n3,0,1,1\n3,1,2,1\n", testing::x_schema());
  CHECK(restrict_collection(d, k10) == std::vector<int>{1, 3});
  CHECK(ERRC_OF(require_arms(d, k10, {1, 2, 3})) == Errc::trial_lacks_arm);
  CHECK(resolve_collection(d, {}) == std::vector<int>{1, 2, 3});
  CHECK(ERRC_OF(estimate_phi_w(d, k10, DesignSpec::intercept_only(), known_half())) == Errc::trial_lacks_arm);
}

TEST_CASE("sweep") {
  const auto d = testing::load_fixture("d2.csv");
  SingleTrialConfig cfg;
  cfg.outcome_design = DesignSpec::parse({"x"});
  cfg.participation_design = DesignSpec::parse({"x"});
  cfg.treatment = estimated_x();
  const auto sweep = per_trial_transport_sweep(d, k10, cfg);
  REQUIRE(sweep.estimates.size() == 4);
  CHECK(sweep.failures.empty());
  CHECK(sweep.estimates[0].estimator == Estimator::psi_te);
  CHECK(sweep.estimates[1].estimator == Estimator::psi_w);
  CHECK(sweep.estimates[2].source == "2");
  const auto single = estimate_psi_te(d, 2, k10, cfg.outcome_design);
  CHECK(sweep.estimates[2].point == single.estimate.point);
  CHECK(sweep.estimates[2].variance == single.estimate.variance);
  const auto threaded = per_trial_transport_sweep(d, k10, cfg, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(threaded.estimates[i].point == sweep.estimates[i].point);

  const auto one = per_trial_transport_sweep(testing::load_fixture("d1.csv"), k10, cfg);
  REQUIRE(one.estimates.size() == 2);
  CHECK(std::abs(one.estimates[0].point - 3.25) < 1e-10);
}

TEST_CASE("sweep records failures and keeps going") {
  // Trial 2 has no control arm.
  const auto d = ingest_csv_text(
      "S,Z,Y,x\n0,,,0\n0,,,1\n1,1,1,0\n1,0,2,0\n1,1,3,1\n1,0,1,1\n2,1,3,0\n2,1,4,1\n",
      testing::x_schema());
  SingleTrialConfig cfg;
  cfg.outcome_design = DesignSpec::parse({"x"});
  cfg.participation_design = DesignSpec::parse({"x"});
  cfg.treatment = known_half();
  const auto sweep = per_trial_transport_sweep(d, k10, cfg);
  CHECK(sweep.estimates.size() == 2);
  CHECK(sweep.failures.size() == 2);
  CHECK(sweep.failures[0].trial == 2);
}

TEST_CASE("property: saturated outcome and weighting forms agree on random binary data") {
  std::mt19937_64 gen(99);
  for (int rep = 0; rep < 20; ++rep) {
    CAPTURE(rep);
    const auto d = random_binary(gen, 2, 40 + rep);
    const auto sat = DesignSpec::parse({"x"});
    for (int s = 1; s <= 2; ++s) {
      const double te = estimate_psi_te(d, s, k10, sat).estimate.point;
      const double w = estimate_psi_w(d, s, k10, sat, estimated_x()).point;
      CHECK(std::abs(te - w) < 1e-10);
    }
    const double pte = estimate_phi_te(d, k10, sat, estimated_x()).estimate.point;
    const double pw = estimate_phi_w(d, k10, sat, estimated_x()).point;
    CHECK(std::abs(pte - pw) < 1e-10);
  }
}

TEST_CASE("property: row order and label relabeling invariance") {
  std::mt19937_64 gen(7);
  for (int rep = 0; rep < 8; ++rep) {
    const auto d = random_binary(gen, 2, 50);
    std::vector<std::size_t> perm(d.n());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    const auto p = d.subset(perm);
    const auto sat = DesignSpec::parse({"x"});
    CHECK(std::abs(estimate_psi_te(d, 1, k10, sat).estimate.point - estimate_psi_te(p, 1, k10, sat).estimate.point) <
          1e-10);
    CHECK(std::abs(estimate_phi_w(d, k10, sat, estimated_x()).point -
                   estimate_phi_w(p, k10, sat, estimated_x()).point) < 1e-10);

    // Swapping the contrast negates the estimate.
    const Contrast k01{"0", "1"};
    CHECK(std::abs(estimate_psi_w(d, 2, k10, sat, estimated_x()).point +
                   estimate_psi_w(d, 2, k01, sat, estimated_x()).point) < 1e-10);
    CHECK(std::abs(estimate_phi_te(d, k10, sat, estimated_x()).estimate.point +
                   estimate_phi_te(d, k01, sat, estimated_x()).estimate.point) < 1e-10);
  }
}

TEST_CASE("known versus estimated treatment probabilities") {
  // With every D2 cell balanced, estimated probabilities are exactly 1/2.
  const auto d = testing::load_fixture("d2.csv");
  const auto sat = DesignSpec::parse({"x"});
  const auto k = estimate_psi_w(d, 2, k10, sat, known_half());
  const auto e = estimate_psi_w(d, 2, k10, sat, estimated_x());
  CHECK(std::abs(k.point - e.point) < 1e-12);
  // Estimating the known nuisance does not increase the variance.
  CHECK(e.variance <= k.variance + 1e-12);

  auto bad = known_half();
  bad.known = {{"0", 0.5}, {"1", 1.5}};
  CHECK(ERRC_OF(estimate_psi_w(d, 2, k10, sat, bad)) == Errc::probability_out_of_range);
}

TEST_CASE("extreme odds produce a warning and truncation caps them") {
  const auto d = testing::load_fixture("d1.csv");
  AnalysisOptions opts;
  opts.weights.extreme_odds_warning = 0.5;
  const auto w = estimate_psi_w(d, 1, k10, DesignSpec::parse({"x"}), estimated_x(), opts);
  bool warned = false;
  for (const auto& s : w.warnings) warned |= s.find("ExtremeWeight") != std::string::npos;
  CHECK(warned);
  opts.weights.truncate_odds_quantile = 0.5;
  const auto t = estimate_psi_w(d, 1, k10, DesignSpec::parse({"x"}), estimated_x(), opts);
  CHECK(t.point != w.point);
}
