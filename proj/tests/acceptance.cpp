// One PASS/FAIL line per acceptance criterion. Exit status 1 if any fails.
#include "support.hpp"

#include "transport_meta/diagnostics.hpp"
#include "transport_meta/inference.hpp"
#include "transport_meta/oracle.hpp"
#include "transport_meta/per_protocol.hpp"
#include "transport_meta/results.hpp"
#include "transport_meta/run.hpp"
#include "transport_meta/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

using namespace tmeta;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Accumulates failures; the first few go into the detail string.
struct Checks {
  bool pass = true;
  std::vector<std::string> notes;
  std::vector<std::string> failures;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures.push_back(what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }

  Verdict verdict() const {
    std::string d;
    const auto& list = failures.empty() ? notes : failures;
    for (std::size_t i = 0; i < list.size() && i < 8; ++i) d += (i ? "; " : "") + list[i];
    if (list.size() > 8) d += "; ...";
    return {pass, d};
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

const Contrast k10{"1", "0"};
const JointContrast kPp{"1", "1", "0", "0"};

DesignSpec design(std::initializer_list<std::string> terms) { return DesignSpec::parse(terms); }

TreatmentModelSpec estimated_x() {
  TreatmentModelSpec t;
  t.design = design({"x"});
  return t;
}

AdherenceModelSpec adherence_x_l() {
  AdherenceModelSpec a;
  a.design = design({"x", "L"});
  return a;
}

SimWorld world(const char* name) { return load_world(std::filesystem::path(TMETA_WORLD_DIR) / name); }

std::size_t threads() { return worker_count(0); }

// Point estimates keyed by name, with sandwich variances.
struct Estimators {
  std::vector<std::pair<std::string, std::function<ContrastEstimate(const CompositeDataset&, const AnalysisOptions&)>>>
      list;
};

Estimators itt_estimators() {
  Estimators e;
  for (int s = 1; s <= 2; ++s) {
    e.list.emplace_back("psi_te[" + std::to_string(s) + "]", [s](const CompositeDataset& d, const AnalysisOptions& o) {
      return estimate_psi_te(d, s, k10, design({"x"}), o).estimate;
    });
    e.list.emplace_back("psi_w[" + std::to_string(s) + "]", [s](const CompositeDataset& d, const AnalysisOptions& o) {
      return estimate_psi_w(d, s, k10, design({"x"}), estimated_x(), o);
    });
  }
  e.list.emplace_back("phi_te", [](const CompositeDataset& d, const AnalysisOptions& o) {
    return estimate_phi_te(d, k10, design({"x"}), estimated_x(), o).estimate;
  });
  e.list.emplace_back("phi_w", [](const CompositeDataset& d, const AnalysisOptions& o) {
    return estimate_phi_w(d, k10, design({"x"}), estimated_x(), o);
  });
  return e;
}

Estimators pp_estimators() {
  Estimators e;
  e.list.emplace_back("pp_te[1]", [](const CompositeDataset& d, const AnalysisOptions& o) {
    return estimate_pp_te(d, 1, kPp, design({"x", "L"}), design({"x"}), o).estimate;
  });
  e.list.emplace_back("pp_w", [](const CompositeDataset& d, const AnalysisOptions& o) {
    return estimate_pp_w(d, kPp, design({"x"}), estimated_x(), adherence_x_l(), o);
  });
  return e;
}

bool close_to_truth(double est, double truth) {
  const double tol = std::abs(truth) < 1.0 ? 0.05 : 0.05 * std::abs(truth);
  return std::abs(est - truth) <= tol;
}

// ---------------------------------------------------------------------------

Verdict oracle_equivalence() {
  Checks c;
  constexpr double tol = 1e-10;
  auto agree = [&](const std::string& what, double a, double b) {
    c.require(std::abs(a - b) <= tol, what + ": " + fmt(a, 17) + " vs " + fmt(b, 17));
  };
  auto query = [](Functional f) {
    OracleQuery q;
    q.functional = f;
    q.z = "1";
    q.z_prime = "0";
    return q;
  };

  {
    const auto d = testing::load_fixture("d1.csv");
    const auto raw = testing::read_raw(testing::fixture("d1.csv"));
    const auto cells = testing::tabulate(raw);
    const double te = estimate_psi_te(d, 1, k10, design({"x"})).estimate.point;
    const double w = estimate_psi_w(d, 1, k10, design({"x"}), estimated_x()).point;
    const double eq1 = enumerate_functional(d, query(Functional::psi_outcome)).value;
    const double eq2 = enumerate_functional(d, query(Functional::psi_weighting)).value;
    agree("D1 psi_te = 3.25", te, 3.25);
    agree("D1 psi_w = psi_te", w, te);
    agree("D1 outcome functional", eq1, te);
    agree("D1 weighting functional", eq2, te);
    agree("D1 cell outcome formula", testing::psi_outcome(cells, 1, 1, 0), te);
    agree("D1 cell weighting formula", testing::psi_weighting(raw, cells, 1, 1, 0), te);
    c.note("D1 " + fmt(te, 10));
  }
  {
    const auto d = testing::load_fixture("d2.csv");
    const auto raw = testing::read_raw(testing::fixture("d2.csv"));
    const auto cells = testing::tabulate(raw);
    const double te = estimate_phi_te(d, k10, design({"x"}), estimated_x()).estimate.point;
    const double w = estimate_phi_w(d, k10, design({"x"}), estimated_x()).point;
    agree("D2 phi_te = 139/30", te, 139.0 / 30.0);
    agree("D2 phi_w = phi_te", w, te);
    agree("D2 outcome functional", enumerate_functional(d, query(Functional::phi_outcome)).value, te);
    agree("D2 weighting functional", enumerate_functional(d, query(Functional::phi_weighting)).value, te);
    agree("D2 cell outcome formula", testing::phi_outcome(raw, cells, 1, 0), te);
    agree("D2 cell weighting formula", testing::phi_weighting(raw, cells, 1, 0), te);
    for (int s = 1; s <= 2; ++s) {
      auto q = query(Functional::psi_outcome);
      q.trial = s;
      const double te_s = estimate_psi_te(d, s, k10, design({"x"})).estimate.point;
      agree("D2 psi_te trial " + std::to_string(s), te_s, enumerate_functional(d, q).value);
      agree("D2 psi_w trial " + std::to_string(s), estimate_psi_w(d, s, k10, design({"x"}), estimated_x()).point, te_s);
    }
    c.note("D2 " + fmt(te, 10));
  }
  {
    const auto d = testing::load_fixture("d3.csv");
    const auto raw = testing::read_raw(testing::fixture("d3.csv"));
    AdherenceModelSpec adh;
    adh.design = design({"x", "l", "x:l"});
    const double te = estimate_pp_te(d, 1, kPp, design({"x", "l", "x:l"}), design({"x"})).estimate.point;
    const double w = estimate_pp_w(d, kPp, design({"x"}), estimated_x(), adh).point;
    OracleQuery q = query(Functional::pp_effect);
    q.a = "1";
    q.a_prime = "0";
    const double nested = enumerate_functional(d, q).value;
    q.functional = Functional::lambda;
    const double lambda = enumerate_functional(d, q).value;
    const double cells = testing::pp_theta(raw, 1, 1, 1) - testing::pp_theta(raw, 1, 0, 0);
    agree("D3 pp_te vs nested functional", te, nested);
    agree("D3 pp_w vs weighting functional", w, lambda);
    agree("D3 pp_te = pp_w", te, w);
    agree("D3 cell formula", cells, te);
    c.note("D3 " + fmt(te, 10));
  }
  return c.verdict();
}

Verdict consistency() {
  Checks c;
  const auto itt = world("itt_normal.toml");
  const auto sim = simulate(itt);
  const double truth = sim.truth.effect("1", "0");
  AnalysisOptions point_only;
  point_only.sandwich = false;
  for (const auto& [name, fn] : itt_estimators().list) {
    const double est = fn(sim.data, point_only).point;
    c.require(close_to_truth(est, truth), name + " " + fmt(est) + " vs truth " + fmt(truth));
    c.note(name + " " + fmt(est));
  }
  const auto adh = world("adherence_normal.toml");
  const auto psim = simulate(adh);
  const double pp_truth = psim.truth.per_protocol_effect("1", "1", "0", "0");
  for (const auto& [name, fn] : pp_estimators().list) {
    const double est = fn(psim.data, point_only).point;
    c.require(close_to_truth(est, pp_truth), name + " " + fmt(est) + " vs truth " + fmt(pp_truth));
    c.note(name + " " + fmt(est));
  }
  c.notes.insert(c.notes.begin(), "truth itt " + fmt(truth) + ", pp " + fmt(pp_truth));
  return c.verdict();
}

Verdict coverage() {
  Checks c;
  constexpr std::size_t reps = 500;
  constexpr std::size_t n = 2000;
  const auto w = world("itt_normal.toml");
  const double truth = world_truth(w).effect("1", "0");
  const auto est = itt_estimators();
  std::vector<std::vector<int>> hit(est.list.size(), std::vector<int>(reps, 0));
  std::vector<std::string> errors;
  std::mutex mu;
  parallel_for(reps, threads(), [&](std::size_t r) {
    try {
      const auto sim = simulate(w, n, 5000 + r);
      for (std::size_t k = 0; k < est.list.size(); ++k) {
        const auto e = est.list[k].second(sim.data, {});
        hit[k][r] = e.ci_lower <= truth && truth <= e.ci_upper;
      }
    } catch (const std::exception& ex) {
      std::lock_guard lock(mu);
      errors.push_back("replicate " + std::to_string(r) + ": " + ex.what());
    }
  });
  c.require(errors.empty(), errors.empty() ? "" : errors.front());
  for (std::size_t k = 0; k < est.list.size(); ++k) {
    double rate = 0.0;
    for (int h : hit[k]) rate += h;
    rate /= reps;
    c.require(rate >= 0.92 && rate <= 0.98, est.list[k].first + " coverage " + pct(rate));
    c.note(est.list[k].first + " " + pct(rate));
  }
  return c.verdict();
}

Verdict bootstrap_agreement() {
  Checks c;
  constexpr std::size_t n = 2000;
  const auto itt = simulate(world("itt_normal.toml"), n, 77).data;
  const auto adh = simulate(world("adherence_normal.toml"), n, 78).data;
  AnalysisOptions point_only;
  point_only.sandwich = false;
  auto compare = [&](const CompositeDataset& d, const Estimators& est) {
    for (const auto& [name, fn] : est.list) {
      const auto e = fn(d, {});
      BootstrapConfig bc;
      bc.replicates = 5000;
      bc.seed = 2024;
      bc.threads = threads();
      const auto b = bootstrap(d, [&](const CompositeDataset& s) { return fn(s, point_only).point; }, bc);
      const double sand = std::sqrt(e.variance);
      const double boot = std::sqrt(b.variance);
      const double ratio = boot / sand;
      c.require(b.failed == 0 || b.failed < 50, name + " " + std::to_string(b.failed) + " failed replicates");
      c.require(std::abs(ratio - 1.0) <= 0.15, name + " bootstrap/sandwich SE " + fmt(ratio));
      c.note(name + " " + fmt(ratio, 3));
    }
  };
  compare(itt, itt_estimators());
  compare(adh, pp_estimators());
  return c.verdict();
}

// Fraction of replicates whose p-value falls below 0.05.
double rejection_rate(const SimWorld& w, std::size_t reps, std::size_t n, std::uint64_t seed0,
                      const std::function<double(const CompositeDataset&)>& p_value, std::vector<std::string>& errors) {
  std::vector<int> reject(reps, 0);
  std::mutex mu;
  parallel_for(reps, threads(), [&](std::size_t r) {
    try {
      reject[r] = p_value(simulate(w, n, seed0 + r).data) < 0.05;
    } catch (const std::exception& ex) {
      std::lock_guard lock(mu);
      errors.push_back(ex.what());
    }
  });
  double total = 0.0;
  for (int v : reject) total += v;
  return total / static_cast<double>(reps);
}

Verdict falsification_calibration() {
  Checks c;
  std::vector<std::string> errors;
  auto p = [](const CompositeDataset& d) { return falsification_test(d, k10, design({"x"}), estimated_x()).p_value; };
  const auto null_world = world("falsification_null.toml");
  const double size = rejection_rate(null_world, 500, null_world.n, 7000, p, errors);
  const auto alt_world = world("falsification_shift.toml");
  const double power = rejection_rate(alt_world, 100, alt_world.n, 8000, p, errors);
  c.require(errors.empty(), errors.empty() ? "" : errors.front());
  c.require(size >= 0.03 && size <= 0.08, "size " + pct(size));
  c.require(power > 0.90, "power " + pct(power));
  c.note("size " + pct(size) + " over 500");
  c.note("power " + pct(power) + " over 100 at 5000 per trial");
  return c.verdict();
}

Verdict homogeneity_contrast() {
  Checks c;
  constexpr std::size_t reps = 500;
  const auto w = world("homogeneity.toml");
  std::vector<int> reject(reps, 0);
  std::vector<double> gap(reps, 0.0);
  std::vector<std::string> errors;
  std::mutex mu;
  parallel_for(reps, threads(), [&](std::size_t r) {
    try {
      const auto h = homogeneity_of_transported(simulate(w, w.n, 9000 + r).data, k10, design({"x"}));
      reject[r] = h.transported_test.p_value < 0.05;
      gap[r] = h.classical_max_gap_se;
    } catch (const std::exception& ex) {
      std::lock_guard lock(mu);
      errors.push_back(ex.what());
    }
  });
  c.require(errors.empty(), errors.empty() ? "" : errors.front());
  double rate = 0.0;
  for (int v : reject) rate += v;
  rate /= reps;
  std::nth_element(gap.begin(), gap.begin() + reps / 2, gap.end());
  const double median_gap = gap[reps / 2];
  c.require(rate >= 0.02 && rate <= 0.10, "transported rejection " + pct(rate));
  c.require(median_gap > 3.0, "median self-standardized gap " + fmt(median_gap) + " SE");
  c.note("transported rejection " + pct(rate));
  c.note("median self-standardized gap " + fmt(median_gap, 3) + " SE");
  return c.verdict();
}

Verdict sensitivity_exactness() {
  Checks c;
  constexpr double tol = 1e-12;
  std::vector<CompositeDataset> sets{testing::load_fixture("d1.csv"),
                                     simulate(world("itt_normal.toml"), 2000, 31).data};
  SingleTrialConfig cfg;
  cfg.outcome_design = design({"x"});
  cfg.participation_design = design({"x"});
  cfg.treatment = estimated_x();
  double worst = 0.0;
  for (const auto& d : sets)
    for (int s = 1; s <= d.m(); ++s) {
      const auto te = estimate_psi_te(d, s, k10, cfg.outcome_design).estimate;
      const auto w = estimate_psi_w(d, s, k10, cfg.participation_design, cfg.treatment);
      for (const auto* base : {&te, &w}) {
        const auto zero = sensitivity_adjust(*base, d, cfg, BiasFunction::constant_shift(s, 0.0));
        c.require(std::abs(zero.point - base->point) <= tol, "u=0 moved the point");
        c.require(std::abs(zero.variance - base->variance) <= tol, "u=0 moved the variance");
        for (double shift : {-3.0, -0.25, 0.1, 2.5, 10.0}) {
          const auto adj = sensitivity_adjust(*base, d, cfg, BiasFunction::constant_shift(s, shift));
          const double err = std::abs(adj.point - (base->point + shift));
          worst = std::max(worst, err);
          c.require(err <= tol, "u=" + fmt(shift) + " off by " + fmt(err));
        }
      }
    }
  c.note("largest deviation " + fmt(worst, 3));
  return c.verdict();
}

// Everyone receives the assigned arm and no post-assignment covariate.
CompositeDataset full_adherence(const CompositeDataset& d) {
  auto rows = d.rows();
  for (auto& r : rows) r.received = r.treatment;
  auto o = d.options();
  o.has_adherence = true;
  o.received_labels = o.treatment_labels;
  return CompositeDataset::from_rows(rows, o);
}

Verdict per_protocol_collapse() {
  Checks c;
  constexpr double tol = 1e-10;
  std::vector<CompositeDataset> sets{testing::load_fixture("d2.csv")};
  for (std::uint64_t seed : {41, 42, 43}) sets.push_back(simulate(world("itt_normal.toml"), 2000, seed).data);
  double worst = 0.0;
  auto agree = [&](const std::string& what, double a, double b) {
    worst = std::max(worst, std::abs(a - b));
    c.require(std::abs(a - b) <= tol, what + ": " + fmt(a, 17) + " vs " + fmt(b, 17));
  };
  const auto x = design({"x"});
  AdherenceModelSpec adh;
  adh.design = x;
  AdherenceModelSpec per_trial = adh;
  per_trial.per_trial = true;
  for (const auto& itt : sets) {
    const auto pp = full_adherence(itt);
    for (int s = 1; s <= itt.m(); ++s)
      agree("pp_te trial " + std::to_string(s), estimate_pp_te(pp, s, kPp, x, x).estimate.point,
            estimate_psi_te(itt, s, k10, x).estimate.point);
    const double phi_w = estimate_phi_w(itt, k10, x, estimated_x()).point;
    agree("pp_w", estimate_pp_w(pp, kPp, x, estimated_x(), adh).point, phi_w);
    agree("pp_w per-trial adherence", estimate_pp_w(pp, kPp, x, estimated_x(), per_trial).point, phi_w);
  }
  c.note("largest deviation " + fmt(worst, 3) + " over " + std::to_string(sets.size()) + " datasets");
  return c.verdict();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Verdict determinism() {
  Checks c;
  const auto dir = std::filesystem::temp_directory_path() / "tmeta-acceptance-determinism";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "itt.csv", write_csv_text(simulate(world("itt_normal.toml"), 1500, 61).data));
  write_text(dir / "adh.csv", write_csv_text(simulate(world("adherence_normal.toml"), 1500, 62).data));

  const std::string itt_config =
      "seed = 99\n[data]\npath = \"itt.csv\"\n[schema]\ncovariates = [\"x\"]\n"
      "[analysis]\nz = \"1\"\nzprime = \"0\"\ntrial = 1\n"
      "[variance]\nmethod = \"both\"\nreplicates = 200\n"
      "[[bias]]\ntrial = 1\nc = 0.5\n[[bias]]\ntrial = 2\nc = 0.0\n";
  const std::string adh_config =
      "seed = 99\n[data]\npath = \"adh.csv\"\n[schema]\ncovariates = [\"x\"]\nreceived = \"A\"\n"
      "post_covariates = [\"L\"]\n[analysis]\nz = \"1\"\nzprime = \"0\"\na = \"1\"\naprime = \"0\"\ntrial = 1\n"
      "[variance]\nmethod = \"both\"\nreplicates = 200\n";
  struct Case {
    std::string kind;
    const std::string* text;
  };
  const std::vector<Case> cases{{"single", &itt_config},      {"sweep", &itt_config},
                                {"pooled", &itt_config},      {"falsify", &itt_config},
                                {"homogeneity", &itt_config}, {"sensitivity", &itt_config},
                                {"per-protocol", &adh_config}};
  std::size_t compared = 0;
  for (const auto& cs : cases) {
    std::string json0, svg0;
    for (const char* t : {"1", "2", "8"}) {
      std::string json, svg;
      try {
        auto cfg = ConfigSource::from_string(*cs.text, dir);
        cfg.set("analysis.kind", cs.kind);
        cfg.set("variance.threads", t);
        const auto doc = run(cfg.resolve());
        json = serialize(doc);
        svg = doc.estimates.empty() ? "" : render_forest_svg(doc);
      } catch (const std::exception& ex) {
        json = std::string("error: ") + ex.what();
      }
      c.require(json.rfind("error: ", 0) != 0, cs.kind + " threads=" + t + " " + json);
      if (std::string(t) == "1") {
        json0 = json;
        svg0 = svg;
      } else {
        c.require(json == json0, cs.kind + " JSON differs at threads=" + t);
        c.require(svg == svg0, cs.kind + " SVG differs at threads=" + t);
        ++compared;
      }
    }
  }
  std::filesystem::remove_all(dir);
  c.note(std::to_string(cases.size()) + " analyses, thread counts 1/2/8, " + std::to_string(compared) +
         " comparisons identical");
  return c.verdict();
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  Verdict (*fn)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "oracle equivalence on D1/D2/D3", 5, oracle_equivalence},
      {2, "consistency at n=20000", 120, consistency},
      {3, "sandwich Wald coverage", 600, coverage},
      {4, "bootstrap vs sandwich SE", 180, bootstrap_agreement},
      {5, "falsification size and power", 600, falsification_calibration},
      {6, "transported homogeneity vs classical", 600, homogeneity_contrast},
      {7, "sensitivity exactness", 60, sensitivity_exactness},
      {8, "per-protocol collapse", 60, per_protocol_collapse},
      {9, "determinism across thread counts", 300, determinism},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = cr.fn();
    } catch (const std::exception& ex) {
      v = {false, std::string("exception: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > cr.budget_seconds) {
      v.pass = false;
      v.detail += "; runtime over " + fmt(cr.budget_seconds) + " s";
    }
    if (!v.pass) ++failed;
    std::printf("%s %d %s (%.1f s): %s\n", v.pass ? "PASS" : "FAIL", cr.id, cr.name, secs, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
