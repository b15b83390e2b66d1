#include "transport_meta/oracle.hpp"

#include "transport_meta/error.hpp"
#include "transport_meta/glm.hpp"
#include "transport_meta/rng.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace tmeta {

namespace {

constexpr double kSumTol = 1e-12;

[[noreturn]] void invalid(const std::string& msg) { fail(Errc::invalid_world, msg); }

std::size_t arm_index(const SimWorld& w, std::string_view label) {
  auto it = std::find(w.arms.begin(), w.arms.end(), label);
  if (it == w.arms.end()) fail(Errc::invalid_contrast, "unknown arm '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - w.arms.begin());
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

std::size_t draw_category(Rng& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

}  // namespace

double CovariateLaw::expectation() const {
  if (kind == Kind::normal) return mean;
  return dot(levels, probs);
}

bool SimWorld::all_discrete() const {
  for (const auto& s : strata)
    for (const auto& c : s.covariates)
      if (c.kind != CovariateLaw::Kind::discrete) return false;
  return true;
}

void SimWorld::validate() const {
  const std::size_t k = arms.size();
  const std::size_t p = covariate_names.size();
  if (k < 2) invalid("a world needs at least two arms");
  if (strata.size() < 2) invalid("a world needs a target stratum and at least one trial");
  if (!(noise_sd >= 0.0)) invalid("noise_sd must be nonnegative");
  if (n < strata.size()) invalid("n must be at least the number of strata");
  if (intercepts.size() != k || slopes.size() != k) invalid("outcome intercepts and slopes need one entry per arm");
  for (const auto& s : slopes)
    if (s.size() != p) invalid("each arm's slopes need one entry per covariate");
  double share = 0.0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    const auto& st = strata[s];
    const std::string tag = "stratum " + std::to_string(s);
    if (!(st.share > 0.0)) invalid(tag + ": share must be positive");
    share += st.share;
    if (st.covariates.size() != p) invalid(tag + ": needs one law per covariate");
    for (std::size_t j = 0; j < p; ++j) {
      const auto& c = st.covariates[j];
      if (c.kind == CovariateLaw::Kind::normal) {
        if (!(c.sd >= 0.0)) invalid(tag + ": covariate '" + covariate_names[j] + "' has negative sd");
      } else {
        if (c.levels.empty() || c.levels.size() != c.probs.size())
          invalid(tag + ": covariate '" + covariate_names[j] + "' needs matching levels and probs");
        double t = 0.0;
        for (double q : c.probs) {
          if (q < 0.0) invalid(tag + ": negative probability");
          t += q;
        }
        if (std::abs(t - 1.0) > kSumTol)
          invalid(tag + ": probabilities of covariate '" + covariate_names[j] + "' sum to " + std::to_string(t));
      }
    }
    if (!st.arm_shift.empty() && st.arm_shift.size() != k) invalid(tag + ": arm_shift needs one entry per arm");
    if (s > 0) {
      if (st.randomization.size() != k) invalid(tag + ": randomization needs one entry per arm");
      double t = 0.0;
      for (double q : st.randomization) {
        if (q < 0.0) invalid(tag + ": negative randomization probability");
        t += q;
      }
      if (std::abs(t - 1.0) > kSumTol) invalid(tag + ": randomization probabilities sum to " + std::to_string(t));
    }
  }
  if (std::abs(share - 1.0) > kSumTol) invalid("stratum shares sum to " + std::to_string(share));
  if (adherence) {
    const auto& a = *adherence;
    if (a.l_x.size() != p) invalid("adherence l_x needs one entry per covariate");
    if (a.adhere_intercept.size() != k || a.adhere_x.size() != k || a.adhere_l.size() != k ||
        a.received_coef.size() != k)
      invalid("adherence coefficients need one entry per arm");
    for (const auto& v : a.adhere_x)
      if (v.size() != p) invalid("adherence adhere_x needs one entry per covariate");
    if (a.l_kind == AdherenceLaw::Kind::normal && !(a.l_sd >= 0.0)) invalid("adherence l_sd must be nonnegative");
    if (a.l_kind == AdherenceLaw::Kind::bernoulli && !all_discrete())
      invalid("a bernoulli post-assignment covariate needs discrete baseline covariates");
  }
}

// ---------------------------------------------------------------------------
// TOML

namespace {

std::vector<double> num_array(const toml::node_view<const toml::node>& node, const std::string& what) {
  std::vector<double> out;
  if (!node) return out;
  const auto* arr = node.as_array();
  if (!arr) invalid("'" + what + "' must be an array of numbers");
  for (const auto& e : *arr) {
    auto v = e.value<double>();
    if (!v) invalid("'" + what + "' must be an array of numbers");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::vector<double>> num_matrix(const toml::node_view<const toml::node>& node, const std::string& what) {
  std::vector<std::vector<double>> out;
  if (!node) return out;
  const auto* arr = node.as_array();
  if (!arr) invalid("'" + what + "' must be an array of arrays");
  for (const auto& e : *arr) out.push_back(num_array(toml::node_view<const toml::node>(&e), what));
  return out;
}

double num(const toml::node_view<const toml::node>& node, const std::string& what, double fallback) {
  if (!node) return fallback;
  auto v = node.value<double>();
  if (!v) invalid("'" + what + "' must be a number");
  return *v;
}

CovariateLaw parse_law(const toml::node& node) {
  const auto* t = node.as_table();
  if (!t) invalid("covariate laws must be tables");
  const toml::node_view<const toml::node> v(node);
  CovariateLaw law;
  const std::string kind = v["law"].value_or(std::string("normal"));
  if (kind == "normal") {
    law.mean = num(v["mean"], "mean", 0.0);
    law.sd = num(v["sd"], "sd", 1.0);
  } else if (kind == "discrete") {
    law.kind = CovariateLaw::Kind::discrete;
    law.levels = num_array(v["levels"], "levels");
    law.probs = num_array(v["probs"], "probs");
  } else {
    invalid("unknown covariate law '" + kind + "'");
  }
  return law;
}

}  // namespace

SimWorld parse_world_toml(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    invalid(std::string("world TOML: ") + std::string(e.description()));
  }
  const toml::node_view<const toml::node> r(root);
  SimWorld w;
  w.seed = static_cast<std::uint64_t>(r["seed"].value_or<std::int64_t>(0));
  const auto n = r["n"].value_or<std::int64_t>(0);
  if (n < 0) invalid("n must be nonnegative");
  w.n = static_cast<std::size_t>(n);
  w.noise_sd = num(r["noise_sd"], "noise_sd", 1.0);
  if (const auto* arms = r["arms"].as_array())
    for (const auto& a : *arms) {
      if (auto s = a.value<std::string>()) w.arms.push_back(*s);
      else if (auto i = a.value<std::int64_t>()) w.arms.push_back(std::to_string(*i));
      else invalid("arms must be strings or integers");
    }
  if (const auto* cov = r["covariates"].as_array())
    for (const auto& c : *cov) {
      auto s = c.value<std::string>();
      if (!s) invalid("covariates must be names");
      w.covariate_names.push_back(*s);
    }
  w.intercepts = num_array(r["outcome"]["intercepts"], "outcome.intercepts");
  w.slopes = num_matrix(r["outcome"]["slopes"], "outcome.slopes");
  if (const auto* strata = r["stratum"].as_array()) {
    for (const auto& node : *strata) {
      const toml::node_view<const toml::node> s(node);
      StratumLaw st;
      st.share = num(s["share"], "share", 0.0);
      if (const auto* laws = s["covariates"].as_array())
        for (const auto& law : *laws) st.covariates.push_back(parse_law(law));
      st.randomization = num_array(s["randomization"], "randomization");
      st.arm_shift = num_array(s["arm_shift"], "arm_shift");
      w.strata.push_back(std::move(st));
    }
  }
  if (r["adherence"]) {
    const auto a = r["adherence"];
    AdherenceLaw law;
    const std::string kind = a["l_law"].value_or(std::string("normal"));
    if (kind == "bernoulli") law.l_kind = AdherenceLaw::Kind::bernoulli;
    else if (kind != "normal") invalid("unknown l_law '" + kind + "'");
    law.l_intercept = num(a["l_intercept"], "l_intercept", 0.0);
    law.l_x = num_array(a["l_x"], "l_x");
    if (law.l_x.empty()) law.l_x.assign(w.covariate_names.size(), 0.0);
    law.l_arm = num(a["l_arm"], "l_arm", 0.0);
    law.l_sd = num(a["l_sd"], "l_sd", 1.0);
    law.adhere_intercept = num_array(a["adhere_intercept"], "adhere_intercept");
    law.adhere_x = num_matrix(a["adhere_x"], "adhere_x");
    if (law.adhere_x.empty()) law.adhere_x.assign(w.arms.size(), std::vector<double>(w.covariate_names.size(), 0.0));
    law.adhere_l = num_array(a["adhere_l"], "adhere_l");
    if (law.adhere_l.empty()) law.adhere_l.assign(w.arms.size(), 0.0);
    law.l_coef = num(a["l_coef"], "l_coef", 0.0);
    law.received_coef = num_array(a["received_coef"], "received_coef");
    if (law.received_coef.empty()) law.received_coef.assign(w.arms.size(), 0.0);
    w.adherence = std::move(law);
  }
  for (auto& st : w.strata)
    if (st.arm_shift.empty()) st.arm_shift.assign(w.arms.size(), 0.0);
  w.validate();
  return w;
}

SimWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_world_toml(ss.str());
}

// ---------------------------------------------------------------------------
// Population quantities

namespace {

struct Cell {
  std::vector<double> x;
  std::vector<double> prob;  // per stratum
};

// All covariate patterns of a discrete world with their per-stratum
// probabilities.
std::vector<Cell> discrete_cells(const SimWorld& w) {
  if (!w.all_discrete()) invalid("population enumeration needs discrete covariates");
  const std::size_t p = w.covariate_names.size();
  std::vector<Cell> cells{{{}, std::vector<double>(w.strata.size(), 1.0)}};
  for (std::size_t j = 0; j < p; ++j) {
    // Union of levels across strata, each stratum's probability per level.
    std::vector<double> levels;
    for (const auto& st : w.strata)
      for (double v : st.covariates[j].levels)
        if (std::find(levels.begin(), levels.end(), v) == levels.end()) levels.push_back(v);
    std::sort(levels.begin(), levels.end());
    std::vector<Cell> next;
    for (const auto& c : cells)
      for (double v : levels) {
        Cell d = c;
        d.x.push_back(v);
        for (std::size_t s = 0; s < w.strata.size(); ++s) {
          const auto& law = w.strata[s].covariates[j];
          double q = 0.0;
          for (std::size_t k = 0; k < law.levels.size(); ++k)
            if (law.levels[k] == v) q += law.probs[k];
          d.prob[s] *= q;
        }
        next.push_back(std::move(d));
      }
    cells = std::move(next);
  }
  return cells;
}

double mu(const SimWorld& w, std::size_t arm, const std::vector<double>& x, std::size_t stratum) {
  return w.intercepts[arm] + dot(w.slopes[arm], x) + w.strata[stratum].arm_shift[arm];
}

double l_linear(const AdherenceLaw& a, const std::vector<double>& x, std::size_t arm) {
  return a.l_intercept + dot(a.l_x, x) + a.l_arm * static_cast<double>(arm);
}

// Pr[L = l | x, arm] for the bernoulli law.
double l_prob(const AdherenceLaw& a, const std::vector<double>& x, std::size_t arm, int l) {
  const double p1 = expit(l_linear(a, x, arm));
  return l == 1 ? p1 : 1.0 - p1;
}

double adhere_prob(const AdherenceLaw& a, const std::vector<double>& x, std::size_t arm, double l) {
  return expit(a.adhere_intercept[arm] + dot(a.adhere_x[arm], x) + a.adhere_l[arm] * l);
}

// Pr[A = received | x, l, assigned].
double received_prob(const SimWorld& w, const std::vector<double>& x, std::size_t assigned, double l,
                     std::size_t received) {
  const double p = adhere_prob(*w.adherence, x, assigned, l);
  if (received == assigned) return p;
  if (received == (assigned + 1) % w.arms.size()) return 1.0 - p;
  return 0.0;
}

// E[Y | x, S = s, Z = arm, L = l, A = received].
double y_given_all(const SimWorld& w, const std::vector<double>& x, std::size_t s, std::size_t arm, double l,
                   std::size_t received) {
  return mu(w, arm, x, s) + w.adherence->l_coef * l + w.adherence->received_coef[received];
}

// E[Y | x, S = s, Z = arm].
double y_given_arm(const SimWorld& w, const std::vector<double>& x, std::size_t s, std::size_t arm) {
  if (!w.adherence) return mu(w, arm, x, s);
  const auto& a = *w.adherence;
  if (a.l_kind != AdherenceLaw::Kind::bernoulli)
    invalid("intention-to-treat means under a normal post-assignment covariate have no closed form");
  double total = 0.0;
  for (int l = 0; l <= 1; ++l)
    for (std::size_t r = 0; r < w.arms.size(); ++r)
      total += l_prob(a, x, arm, l) * received_prob(w, x, arm, l, r) * y_given_all(w, x, s, arm, l, r);
  return total;
}

// E[Y^{arm, received} | x] in stratum s.
double joint_mean(const SimWorld& w, const std::vector<double>& x, std::size_t s, std::size_t arm,
                  std::size_t received) {
  const auto& a = *w.adherence;
  double el = 0.0;
  if (a.l_kind == AdherenceLaw::Kind::normal) el = l_linear(a, x, arm);
  else el = l_prob(a, x, arm, 1);
  return mu(w, arm, x, s) + a.l_coef * el + a.received_coef[received];
}

}  // namespace

SimTruth world_truth(const SimWorld& w) {
  w.validate();
  SimTruth truth;
  truth.stratum_sizes = apportion([&] {
    std::vector<double> shares;
    for (const auto& st : w.strata) shares.push_back(st.share);
    return shares;
  }(), w.n);
  const std::size_t k = w.arms.size();
  const bool bernoulli = w.adherence && w.adherence->l_kind == AdherenceLaw::Kind::bernoulli;

  // Closed forms are linear in X except through the bernoulli L, which needs
  // the discrete cells.
  std::vector<double> ex0;
  for (const auto& c : w.strata[0].covariates) ex0.push_back(c.expectation());

  auto target_mean = [&](auto&& f) {
    if (w.all_discrete()) {
      double t = 0.0;
      for (const auto& cell : discrete_cells(w)) t += cell.prob[0] * f(cell.x);
      return t;
    }
    return f(ex0);
  };

  if (!w.adherence || (bernoulli && w.all_discrete())) {
    for (std::size_t z = 0; z < k; ++z)
      for (std::size_t zp = 0; zp < k; ++zp) {
        if (z == zp) continue;
        const double v = target_mean([&](const std::vector<double>& x) {
          return y_given_arm(w, x, 0, z) - y_given_arm(w, x, 0, zp);
        });
        truth.itt.push_back({w.arms[z], w.arms[zp], std::nullopt, std::nullopt, v});
      }
  }
  if (w.adherence) {
    for (std::size_t z = 0; z < k; ++z)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t zp = 0; zp < k; ++zp)
          for (std::size_t ap = 0; ap < k; ++ap) {
            if (z == zp && a == ap) continue;
            const double v = target_mean([&](const std::vector<double>& x) {
              return joint_mean(w, x, 0, z, a) - joint_mean(w, x, 0, zp, ap);
            });
            truth.per_protocol.push_back({w.arms[z], w.arms[zp], w.arms[a], w.arms[ap], v});
          }
  }
  return truth;
}

double SimTruth::effect(std::string_view z, std::string_view z_prime) const {
  for (const auto& e : itt)
    if (e.z == z && e.z_prime == z_prime) return e.value;
  fail(Errc::invalid_contrast, "no truth recorded for " + std::string(z) + " vs " + std::string(z_prime));
}

double SimTruth::per_protocol_effect(std::string_view z, std::string_view a, std::string_view z_prime,
                                     std::string_view a_prime) const {
  for (const auto& e : per_protocol)
    if (e.z == z && e.z_prime == z_prime && e.a == a && e.a_prime == a_prime) return e.value;
  fail(Errc::invalid_contrast, "no per-protocol truth recorded for that contrast");
}

std::string SimTruth::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  j["stratum_sizes"] = stratum_sizes;
  ordered_json itt_j = ordered_json::array();
  for (const auto& e : itt) itt_j.push_back({{"z", e.z}, {"zprime", e.z_prime}, {"value", e.value}});
  j["itt"] = itt_j;
  ordered_json pp = ordered_json::array();
  for (const auto& e : per_protocol)
    pp.push_back({{"z", e.z}, {"a", *e.a}, {"zprime", e.z_prime}, {"aprime", *e.a_prime}, {"value", e.value}});
  j["per_protocol"] = pp;
  return j.dump(2) + "\n";
}

std::vector<std::size_t> apportion(const std::vector<double>& shares, std::size_t n) {
  const double total = std::accumulate(shares.begin(), shares.end(), 0.0);
  std::vector<std::size_t> out(shares.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t s = 0; s < shares.size(); ++s) {
    const double exact = shares[s] / total * static_cast<double>(n);
    out[s] = static_cast<std::size_t>(std::floor(exact));
    used += out[s];
    rem.emplace_back(exact - std::floor(exact), s);
  }
  // Largest remainders first; ties go to the earlier stratum.
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++out[rem[k % rem.size()].second];
  return out;
}

Simulated simulate(const SimWorld& world) { return simulate(world, world.n, world.seed); }

Simulated simulate(const SimWorld& world, std::size_t n, std::uint64_t seed) {
  SimWorld w = world;
  w.n = n;
  w.seed = seed;
  w.validate();
  SimTruth truth = world_truth(w);
  const auto& sizes = truth.stratum_sizes;
  for (std::size_t s = 0; s < sizes.size(); ++s)
    if (sizes[s] == 0) invalid("stratum " + std::to_string(s) + " receives no rows at n = " + std::to_string(n));

  Rng rng(seed);
  const std::size_t p = w.covariate_names.size();
  std::vector<Row> rows;
  rows.reserve(n);
  std::size_t next_id = 1;
  for (std::size_t s = 0; s < w.strata.size(); ++s) {
    const auto& st = w.strata[s];
    for (std::size_t r = 0; r < sizes[s]; ++r) {
      Row row;
      row.id = std::to_string(next_id++);
      row.stratum = static_cast<int>(s);
      std::vector<double> x(p);
      for (std::size_t j = 0; j < p; ++j) {
        const auto& law = st.covariates[j];
        x[j] = law.kind == CovariateLaw::Kind::normal ? law.mean + law.sd * rng.normal()
                                                      : law.levels[draw_category(rng, law.probs)];
      }
      row.covariates = x;
      if (s > 0) {
        const std::size_t z = draw_category(rng, st.randomization);
        double y = mu(w, z, x, s);
        if (w.adherence) {
          const auto& a = *w.adherence;
          double l = 0.0;
          if (a.l_kind == AdherenceLaw::Kind::normal) l = l_linear(a, x, z) + a.l_sd * rng.normal();
          else l = rng.bernoulli(l_prob(a, x, z, 1)) ? 1.0 : 0.0;
          const std::size_t received = rng.bernoulli(adhere_prob(a, x, z, l)) ? z : (z + 1) % w.arms.size();
          y += a.l_coef * l + a.received_coef[received];
          row.received = w.arms[received];
          row.post_covariates = {l};
        }
        y += w.noise_sd * rng.normal();
        row.treatment = w.arms[z];
        row.outcome = y;
      }
      rows.push_back(std::move(row));
    }
  }
  CompositeDataset::Options opts;
  opts.covariate_names = w.covariate_names;
  opts.has_adherence = w.adherence.has_value();
  if (w.adherence) opts.post_covariate_names = {"L"};
  opts.treatment_labels = w.arms;
  opts.received_labels = w.arms;
  return {CompositeDataset::from_rows(rows, opts), std::move(truth)};
}

std::string_view functional_name(Functional f) noexcept {
  switch (f) {
    case Functional::psi_outcome: return "psi_outcome";
    case Functional::psi_weighting: return "psi_weighting";
    case Functional::phi_outcome: return "phi_outcome";
    case Functional::phi_weighting: return "phi_weighting";
    case Functional::theta: return "theta";
    case Functional::lambda: return "lambda";
    case Functional::pp_effect: return "pp_effect";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Empirical enumeration

namespace {

using Key = std::vector<double>;

std::string describe(const Key& x) {
  std::string s = "X=(";
  for (std::size_t k = 0; k < x.size(); ++k) s += (k ? "," : "") + format_double(x[k]);
  return s + ")";
}

[[noreturn]] void empty_cell(const std::string& what) { fail(Errc::empty_cell, "empty cell " + what); }

struct Tally {
  double n = 0.0;
  double sum = 0.0;
  void add(double y) {
    n += 1.0;
    sum += y;
  }
  double mean() const { return sum / n; }
};

class Enumerator {
 public:
  Enumerator(const CompositeDataset& d, const OracleQuery& q) : d_(d) {
    z_ = code(q.z);
    zp_ = q.functional == Functional::theta && q.z_prime.empty() ? z_ : code(q.z_prime);
    for (std::size_t i = 0; i < d.n(); ++i) {
      const Key x = key(i);
      const int s = d.stratum(i);
      if (s == 0) {
        target_[x] += 1.0;
        n0_ += 1.0;
        continue;
      }
      n_xs_[{s, x}] += 1.0;
      arm_[{s, d.treatment(i), x}].add(d.outcome(i));
      if (d.has_adherence()) {
        const double l = lval(i);
        l_cell_[{s, d.treatment(i), x, l}] += 1.0;
        joint_[{s, d.treatment(i), d.received(i), x, l}].add(d.outcome(i));
      }
    }
    if (n0_ == 0.0) empty_cell("S=0");
    collection_ = q.collection.empty() ? d.trials() : q.collection;
    for (int s : collection_)
      if (s < 1 || s > d.m()) fail(Errc::unknown_stratum, "trial " + std::to_string(s) + " is not in the data");
  }

  double psi_outcome(int s) const {
    double total = 0.0;
    for (const auto& [x, n0x] : target_) total += n0x / n0_ * (arm_mean(s, z_, x) - arm_mean(s, zp_, x));
    return total;
  }

  double psi_weighting(int s) const {
    for (const auto& [x, n0x] : target_) {
      (void)n0x;
      if (!n_xs_.count({s, x})) empty_cell(describe(x) + ", S=" + std::to_string(s));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < d_.n(); ++i) {
      if (d_.stratum(i) != s) continue;
      const Key x = key(i);
      total += signed_weight(i, s, x) * odds(x, n_xs_.at({s, x})) * d_.outcome(i);
    }
    return total / n0_;
  }

  double phi_outcome() const {
    double total = 0.0;
    for (const auto& [x, n0x] : target_) {
      const double nxc = n_xc(x);
      double inner = 0.0;
      for (int s : collection_) {
        auto it = n_xs_.find({s, x});
        if (it == n_xs_.end()) continue;
        inner += it->second / nxc * (arm_mean(s, z_, x) - arm_mean(s, zp_, x));
      }
      total += n0x / n0_ * inner;
    }
    return total;
  }

  double phi_weighting() const {
    for (const auto& [x, n0x] : target_) {
      (void)n0x;
      n_xc(x);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < d_.n(); ++i) {
      const int s = d_.stratum(i);
      if (!in_collection(s)) continue;
      const Key x = key(i);
      total += signed_weight(i, s, x) * odds(x, n_xc(x)) * d_.outcome(i);
    }
    return total / n0_;
  }

  double theta(int s, int z, int a) const {
    require_adherence();
    double total = 0.0;
    for (const auto& [x, n0x] : target_) {
      auto nz = arm_.find({s, z, x});
      if (nz == arm_.end())
        empty_cell(describe(x) + ", S=" + std::to_string(s) + ", Z=" + d_.treatment_labels()[z]);
      double inner = 0.0;
      for (const auto& [k, count] : l_cell_) {
        const auto& [ks, kz, kx, kl] = k;
        if (ks != s || kz != z || kx != x) continue;
        auto cell = joint_.find({s, z, a, x, kl});
        if (cell == joint_.end())
          empty_cell(describe(x) + ", L=" + format_double(kl) + ", S=" + std::to_string(s) +
                     ", Z=" + d_.treatment_labels()[z] + ", A=" + d_.received_labels()[a]);
        inner += count / nz->second.n * cell->second.mean();
      }
      total += n0x / n0_ * inner;
    }
    return total;
  }

  double lambda(int a, int ap) const {
    require_adherence();
    for (const auto& [x, n0x] : target_) {
      (void)n0x;
      n_xc(x);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < d_.n(); ++i) {
      const int s = d_.stratum(i);
      if (!in_collection(s)) continue;
      const Key x = key(i);
      const double l = lval(i);
      const int zi = d_.treatment(i);
      const int ai = d_.received(i);
      const double nxs = n_xs_.at({s, x});
      const double nxsz = arm_.at({s, zi, x}).n;
      const double nl = l_cell_.at({s, zi, x, l});
      const double na = joint_.at({s, zi, ai, x, l}).n;
      const double inv = (nxs / nxsz) * (nl / na);
      double sign = 0.0;
      if (zi == z_ && ai == a) sign += 1.0;
      if (zi == zp_ && ai == ap) sign -= 1.0;
      total += sign * inv * odds(x, n_xc(x)) * d_.outcome(i);
    }
    return total / n0_;
  }

  int z() const { return z_; }
  int zp() const { return zp_; }
  int received_code(const std::string& label) const {
    auto c = d_.received_code(label);
    if (!c) fail(Errc::invalid_contrast, "unknown received treatment '" + label + "'");
    return *c;
  }

 private:
  int code(const std::string& label) const {
    auto c = d_.treatment_code(label);
    if (!c) fail(Errc::invalid_contrast, "unknown treatment '" + label + "'");
    return *c;
  }
  Key key(std::size_t i) const {
    const auto r = d_.covariates().row(static_cast<Eigen::Index>(i));
    Key k(static_cast<std::size_t>(r.size()));
    for (Eigen::Index j = 0; j < r.size(); ++j) k[static_cast<std::size_t>(j)] = r(j);
    return k;
  }
  double lval(std::size_t i) const {
    const auto& l = d_.post_covariates();
    if (l.cols() != 1) fail(Errc::config, "enumeration needs exactly one post-assignment covariate");
    return l(static_cast<Eigen::Index>(i), 0);
  }
  void require_adherence() const {
    if (!d_.has_adherence()) fail(Errc::missing_adherence, "per-protocol enumeration needs received treatment");
  }
  bool in_collection(int s) const {
    return std::find(collection_.begin(), collection_.end(), s) != collection_.end();
  }
  double arm_mean(int s, int z, const Key& x) const {
    auto it = arm_.find({s, z, x});
    if (it == arm_.end())
      empty_cell(describe(x) + ", S=" + std::to_string(s) + ", Z=" + d_.treatment_labels()[z]);
    return it->second.mean();
  }
  double n_xc(const Key& x) const {
    double t = 0.0;
    for (int s : collection_) {
      auto it = n_xs_.find({s, x});
      if (it != n_xs_.end()) t += it->second;
    }
    if (t == 0.0) empty_cell(describe(x) + " in the trial collection");
    return t;
  }
  double odds(const Key& x, double n_side) const {
    auto it = target_.find(x);
    return it == target_.end() ? 0.0 : it->second / n_side;
  }
  double signed_weight(std::size_t i, int s, const Key& x) const {
    const int zi = d_.treatment(i);
    const double nxs = n_xs_.at({s, x});
    const double nxsz = arm_.at({s, zi, x}).n;
    double w = 0.0;
    if (zi == z_) w += nxs / nxsz;
    if (zi == zp_) w -= nxs / nxsz;
    return w;
  }

  const CompositeDataset& d_;
  int z_ = 0;
  int zp_ = 0;
  double n0_ = 0.0;
  std::vector<int> collection_;
  std::map<Key, double> target_;
  std::map<std::pair<int, Key>, double> n_xs_;
  std::map<std::tuple<int, int, Key>, Tally> arm_;
  std::map<std::tuple<int, int, Key, double>, double> l_cell_;
  std::map<std::tuple<int, int, int, Key, double>, Tally> joint_;
};

}  // namespace

OracleResult enumerate_functional(const CompositeDataset& data, const OracleQuery& q) {
  Enumerator e(data, q);
  OracleResult out{q.functional, 0.0, ComputedBy::empirical};
  if (q.functional != Functional::phi_outcome && q.functional != Functional::phi_weighting &&
      q.functional != Functional::lambda && (q.trial < 1 || q.trial > data.m()))
    fail(Errc::unknown_stratum, "trial " + std::to_string(q.trial) + " is not in the data");
  switch (q.functional) {
    case Functional::psi_outcome: out.value = e.psi_outcome(q.trial); break;
    case Functional::psi_weighting: out.value = e.psi_weighting(q.trial); break;
    case Functional::phi_outcome: out.value = e.phi_outcome(); break;
    case Functional::phi_weighting: out.value = e.phi_weighting(); break;
    case Functional::theta: out.value = e.theta(q.trial, e.z(), e.received_code(q.a)); break;
    case Functional::pp_effect:
      out.value = e.theta(q.trial, e.z(), e.received_code(q.a)) - e.theta(q.trial, e.zp(), e.received_code(q.a_prime));
      break;
    case Functional::lambda: out.value = e.lambda(e.received_code(q.a), e.received_code(q.a_prime)); break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Population enumeration

OracleResult enumerate_functional(const SimWorld& w, const OracleQuery& q) {
  w.validate();
  const auto cells = discrete_cells(w);
  const std::size_t z = arm_index(w, q.z);
  const std::size_t zp = arm_index(w, q.z_prime);
  const int m = w.m();
  std::vector<int> collection = q.collection;
  if (collection.empty())
    for (int s = 1; s <= m; ++s) collection.push_back(s);
  for (int s : collection)
    if (s < 1 || s > m) fail(Errc::unknown_stratum, "trial " + std::to_string(s) + " is not in the world");
  const bool pooled = q.functional == Functional::phi_outcome || q.functional == Functional::phi_weighting ||
                      q.functional == Functional::lambda;
  if (!pooled && (q.trial < 1 || q.trial > m))
    fail(Errc::unknown_stratum, "trial " + std::to_string(q.trial) + " is not in the world");
  const auto s_star = static_cast<std::size_t>(q.trial);
  const double pi0 = w.strata[0].share;
  auto pi = [&](std::size_t s) { return w.strata[s].share; };
  auto side = [&](const Cell& c) {
    double t = 0.0;
    for (int s : collection) t += pi(static_cast<std::size_t>(s)) * c.prob[static_cast<std::size_t>(s)];
    return t;
  };
  auto check_support = [&](const Cell& c, double mass) {
    if (c.prob[0] > 0.0 && mass <= 0.0) empty_cell(describe(c.x) + " outside the trials' support");
  };
  auto rand = [&](std::size_t s, std::size_t arm) {
    const double r = w.strata[s].randomization[arm];
    if (r <= 0.0) empty_cell("arm " + w.arms[arm] + " is never assigned in trial " + std::to_string(s));
    return r;
  };
  auto need_pp = [&] {
    if (!w.adherence) invalid("per-protocol functionals need an adherence law");
  };

  OracleResult out{q.functional, 0.0, ComputedBy::population};
  double total = 0.0;
  switch (q.functional) {
    case Functional::psi_outcome:
      for (const auto& c : cells) {
        check_support(c, c.prob[s_star]);
        if (c.prob[0] > 0.0) total += c.prob[0] * (y_given_arm(w, c.x, s_star, z) - y_given_arm(w, c.x, s_star, zp));
      }
      break;
    case Functional::psi_weighting:
      for (const auto& c : cells) {
        check_support(c, c.prob[s_star]);
        if (c.prob[s_star] == 0.0) continue;
        const double odds = pi0 * c.prob[0] / (pi(s_star) * c.prob[s_star]);
        for (std::size_t arm = 0; arm < w.arms.size(); ++arm) {
          const double mass = pi(s_star) * c.prob[s_star] * w.strata[s_star].randomization[arm];
          double sign = 0.0;
          if (arm == z) sign += 1.0 / rand(s_star, z);
          if (arm == zp) sign -= 1.0 / rand(s_star, zp);
          total += mass * sign * odds * y_given_arm(w, c.x, s_star, arm);
        }
      }
      total /= pi0;
      break;
    case Functional::phi_outcome:
      for (const auto& c : cells) {
        const double mass = side(c);
        check_support(c, mass);
        if (c.prob[0] == 0.0) continue;
        double inner = 0.0;
        for (int s : collection) {
          const auto su = static_cast<std::size_t>(s);
          if (c.prob[su] == 0.0) continue;
          inner += pi(su) * c.prob[su] / mass * (y_given_arm(w, c.x, su, z) - y_given_arm(w, c.x, su, zp));
        }
        total += c.prob[0] * inner;
      }
      break;
    case Functional::phi_weighting:
      for (const auto& c : cells) {
        const double side_mass = side(c);
        check_support(c, side_mass);
        if (side_mass == 0.0) continue;
        const double odds = pi0 * c.prob[0] / side_mass;
        for (int s : collection) {
          const auto su = static_cast<std::size_t>(s);
          for (std::size_t arm = 0; arm < w.arms.size(); ++arm) {
            const double mass = pi(su) * c.prob[su] * w.strata[su].randomization[arm];
            if (mass == 0.0) continue;
            double sign = 0.0;
            if (arm == z) sign += 1.0 / rand(su, z);
            if (arm == zp) sign -= 1.0 / rand(su, zp);
            total += mass * sign * odds * y_given_arm(w, c.x, su, arm);
          }
        }
      }
      total /= pi0;
      break;
    case Functional::theta:
    case Functional::pp_effect: {
      need_pp();
      const std::size_t a = arm_index(w, q.a);
      for (const auto& c : cells) {
        check_support(c, c.prob[s_star]);
        if (c.prob[0] == 0.0) continue;
        double v = joint_mean(w, c.x, s_star, z, a);
        if (q.functional == Functional::pp_effect) v -= joint_mean(w, c.x, s_star, zp, arm_index(w, q.a_prime));
        total += c.prob[0] * v;
      }
      break;
    }
    case Functional::lambda: {
      need_pp();
      if (w.adherence->l_kind != AdherenceLaw::Kind::bernoulli)
        invalid("the weighting per-protocol functional needs a bernoulli post-assignment covariate");
      const std::size_t a = arm_index(w, q.a);
      const std::size_t ap = arm_index(w, q.a_prime);
      for (const auto& c : cells) {
        const double side_mass = side(c);
        check_support(c, side_mass);
        if (side_mass == 0.0) continue;
        const double odds = pi0 * c.prob[0] / side_mass;
        for (int s : collection) {
          const auto su = static_cast<std::size_t>(s);
          for (std::size_t arm = 0; arm < w.arms.size(); ++arm)
            for (int l = 0; l <= 1; ++l)
              for (std::size_t r = 0; r < w.arms.size(); ++r) {
                const double mass = pi(su) * c.prob[su] * w.strata[su].randomization[arm] *
                                    l_prob(*w.adherence, c.x, arm, l) * received_prob(w, c.x, arm, l, r);
                if (mass == 0.0) continue;
                double sign = 0.0;
                auto inv = [&](std::size_t zz, std::size_t aa) {
                  const double pa = received_prob(w, c.x, zz, l, aa);
                  if (pa <= 0.0) empty_cell("receipt of " + w.arms[aa] + " under assignment " + w.arms[zz]);
                  return 1.0 / (rand(su, zz) * pa);
                };
                if (arm == z && r == a) sign += inv(z, a);
                if (arm == zp && r == ap) sign -= inv(zp, ap);
                total += mass * sign * odds * y_given_all(w, c.x, su, arm, l, r);
              }
        }
      }
      total /= pi0;
      break;
    }
  }
  out.value = total;
  return out;
}

}  // namespace tmeta
