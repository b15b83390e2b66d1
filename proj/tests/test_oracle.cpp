#include "support.hpp"

#include "transport_meta/oracle.hpp"
#include "transport_meta/per_protocol.hpp"
#include "transport_meta/transport.hpp"

#include <doctest.h>

#include <json.hpp>

#include <numeric>

using namespace tmeta;

namespace {

OracleQuery query(Functional f, std::string z = "1", std::string zp = "0") {
  OracleQuery q;
  q.functional = f;
  q.z = std::move(z);
  q.z_prime = std::move(zp);
  return q;
}

// Binary X, two trials whose X laws differ from the target's.
const char* kDiscreteWorld = R"(
seed = 11
n = 40000
noise_sd = 1.0
arms = ["0", "1"]
covariates = ["x"]
[outcome]
intercepts = [1.0, 2.0]
slopes = [[1.0], [3.0]]
[[stratum]]
share = 0.4
covariates = [{law = "discrete", levels = [0.0, 1.0], probs = [0.3, 0.7]}]
[[stratum]]
share = 0.3
covariates = [{law = "discrete", levels = [0.0, 1.0], probs = [0.6, 0.4]}]
randomization = [0.5, 0.5]
[[stratum]]
share = 0.3
covariates = [{law = "discrete", levels = [0.0, 1.0], probs = [0.8, 0.2]}]
randomization = [0.3, 0.7]
)";

}  // namespace

TEST_CASE("enumerated functionals on D1") {
  const auto d = testing::load_fixture("d1.csv");
  const auto outcome_form = enumerate_functional(d, query(Functional::psi_outcome));
  const auto weighting_form = enumerate_functional(d, query(Functional::psi_weighting));
  CHECK(outcome_form.computed_by == ComputedBy::empirical);
  CHECK(std::abs(outcome_form.value - 3.25) < 1e-12);
  CHECK(std::abs(weighting_form.value - outcome_form.value) < 1e-12);
  CHECK(enumerate_functional(d, query(Functional::psi_outcome, "1", "1")).value == 0.0);
}

TEST_CASE("enumerated pooled functionals on D2") {
  const auto d = testing::load_fixture("d2.csv");
  const auto raw = testing::read_raw(testing::fixture("d2.csv"));
  const auto cells = testing::tabulate(raw);
  const double outcome_form = enumerate_functional(d, query(Functional::phi_outcome)).value;
  const double weighting_form = enumerate_functional(d, query(Functional::phi_weighting)).value;
  CHECK(std::abs(outcome_form - testing::phi_outcome(raw, cells, 1, 0)) < 1e-12);
  CHECK(std::abs(weighting_form - outcome_form) < 1e-12);
  auto q = query(Functional::psi_outcome);
  q.trial = 2;
  CHECK(std::abs(enumerate_functional(d, q).value - testing::psi_outcome(cells, 2, 1, 0)) < 1e-12);
}

TEST_CASE("enumerated per-protocol functionals on D3") {
  const auto d = testing::load_fixture("d3.csv");
  const auto raw = testing::read_raw(testing::fixture("d3.csv"));
  OracleQuery q;
  q.functional = Functional::theta;
  q.z = "1";
  q.a = "1";
  CHECK(std::abs(enumerate_functional(d, q).value - testing::pp_theta(raw, 1, 1, 1)) < 1e-12);
  q.functional = Functional::pp_effect;
  q.z_prime = "0";
  q.a_prime = "0";
  const double pp = enumerate_functional(d, q).value;
  CHECK(std::abs(pp - (testing::pp_theta(raw, 1, 1, 1) - testing::pp_theta(raw, 1, 0, 0))) < 1e-12);
  q.functional = Functional::lambda;
  CHECK(std::abs(enumerate_functional(d, q).value - pp) < 1e-12);
}

TEST_CASE("empty cells are reported") {
  const auto d = ingest_csv_text("S,Z,Y,x\n0,,,0\n0,,,1\n1,1,1,0\n1,0,2,0\n1,1,3,1\n", testing::x_schema());
  CHECK(ERRC_OF(enumerate_functional(d, query(Functional::psi_outcome))) == Errc::empty_cell);
}

TEST_CASE("apportionment") {
  CHECK(apportion({0.5, 0.5}, 100) == std::vector<std::size_t>{50, 50});
  CHECK(apportion({1.0 / 3, 1.0 / 3, 1.0 / 3}, 100) == std::vector<std::size_t>{34, 33, 33});
  const auto a = apportion({0.2, 0.3, 0.5}, 7);
  CHECK(std::accumulate(a.begin(), a.end(), std::size_t{0}) == 7);
}

TEST_CASE("world parsing and validation") {
  const auto w = parse_world_toml(kDiscreteWorld);
  CHECK(w.m() == 2);
  CHECK(w.all_discrete());
  CHECK(w.strata[2].randomization == std::vector<double>{0.3, 0.7});
  CHECK(ERRC_OF(parse_world_toml("arms = [\"0\"]\n[outcome]\nintercepts = [1.0]\n")) == Errc::invalid_world);
  CHECK(ERRC_OF(parse_world_toml("not toml [")) == Errc::invalid_world);
  std::string bad = kDiscreteWorld;
  bad.replace(bad.find("probs = [0.6, 0.4]"), 18, "probs = [0.6, 0.6]");
  CHECK(ERRC_OF(parse_world_toml(bad)) == Errc::invalid_world);
}

TEST_CASE("world truth is the target-law closed form") {
  const auto w = parse_world_toml(kDiscreteWorld);
  const auto truth = world_truth(w);
  // E[(2 + 3x) - (1 + x) | S=0] = 1 + 2 * 0.7.
  CHECK(std::abs(truth.effect("1", "0") - 2.4) < 1e-12);
  CHECK(std::abs(truth.effect("0", "1") + 2.4) < 1e-12);
  const auto pop = enumerate_functional(w, query(Functional::psi_outcome));
  CHECK(pop.computed_by == ComputedBy::population);
  CHECK(std::abs(pop.value - 2.4) < 1e-12);
  auto q = query(Functional::phi_weighting);
  CHECK(std::abs(enumerate_functional(w, q).value - 2.4) < 1e-12);
  const auto j = nlohmann::json::parse(truth.to_json());
  CHECK(j.contains("itt"));
}

TEST_CASE("simulation sizes, determinism and population agreement") {
  const auto w = parse_world_toml(kDiscreteWorld);
  const auto a = simulate(w);
  const auto b = simulate(w);
  CHECK(write_csv_text(a.data) == write_csv_text(b.data));
  CHECK(a.data.stratum_size(0) == 16000);
  CHECK(a.data.stratum_size(1) == 12000);
  CHECK(a.truth.stratum_sizes == std::vector<std::size_t>{16000, 12000, 12000});
  const auto c = simulate(w, 500, 99);
  CHECK(c.data.n() == 500);
  CHECK(write_csv_text(c.data) != write_csv_text(simulate(w, 500, 98).data));

  // Empirical enumeration on a large sample approaches the population value.
  for (auto f : {Functional::psi_outcome, Functional::psi_weighting, Functional::phi_outcome,
                 Functional::phi_weighting}) {
    auto q = query(f);
    q.trial = 2;
    CHECK(std::abs(enumerate_functional(a.data, q).value - enumerate_functional(w, q).value) < 0.1);
  }
}

TEST_CASE("noise-free world gives the exact effect") {
  std::string text = kDiscreteWorld;
  text.replace(text.find("noise_sd = 1.0"), 14, "noise_sd = 0.0");
  text.replace(text.find("slopes = [[1.0], [3.0]]"), 23, "slopes = [[1.0], [1.0]]");
  const auto w = parse_world_toml(text);
  const auto sim = simulate(w, 400, 5);
  const auto e = estimate_psi_te(sim.data, 1, Contrast{"1", "0"}, DesignSpec::parse({"x"}));
  CHECK(std::abs(e.estimate.point - 1.0) < 1e-12);
}

TEST_CASE("homogeneous effect: trial crude effects differ, truth does not depend on shares") {
  const auto w = parse_world_toml(kDiscreteWorld);
  const auto sim = simulate(w);
  const double t1 = unadjusted_trial_effect(sim.data, 1, Contrast{"1", "0"}).point;
  const double t2 = unadjusted_trial_effect(sim.data, 2, Contrast{"1", "0"}).point;
  // Crude effects follow each trial's X law: 1 + 2 * 0.4 and 1 + 2 * 0.2.
  CHECK(std::abs(t1 - 1.8) < 0.1);
  CHECK(std::abs(t2 - 1.4) < 0.1);
  auto w2 = w;
  w2.strata[0].share = 0.1;
  w2.strata[1].share = 0.6;
  CHECK(world_truth(w2).effect("1", "0") == world_truth(w).effect("1", "0"));
}

TEST_CASE("adherence world: per-protocol truth and simulated columns") {
  const auto w = parse_world_toml(R"(
seed = 4
n = 3000
arms = ["0", "1"]
covariates = ["x"]
[outcome]
intercepts = [0.0, 1.0]
slopes = [[1.0], [1.0]]
[[stratum]]
share = 0.5
covariates = [{law = "discrete", levels = [0.0, 1.0], probs = [0.5, 0.5]}]
[[stratum]]
share = 0.5
covariates = [{law = "discrete", levels = [0.0, 1.0], probs = [0.3, 0.7]}]
randomization = [0.5, 0.5]
[adherence]
l_law = "bernoulli"
l_intercept = -0.5
l_x = [1.0]
l_arm = 0.5
adhere_intercept = [2.0, 1.5]
adhere_x = [[0.0], [0.5]]
adhere_l = [-1.0, -0.5]
l_coef = 1.0
received_coef = [0.0, 0.5]
)");
  const auto sim = simulate(w);
  CHECK(sim.data.has_adherence());
  CHECK(sim.data.post_covariate_names() == std::vector<std::string>{"L"});
  OracleQuery q;
  q.functional = Functional::pp_effect;
  q.z = "1";
  q.a = "1";
  q.z_prime = "0";
  q.a_prime = "0";
  const double pop = enumerate_functional(w, q).value;
  CHECK(std::abs(pop - sim.truth.per_protocol_effect("1", "1", "0", "0")) < 1e-12);
  CHECK(std::abs(enumerate_functional(sim.data, q).value - pop) < 0.25);
}
