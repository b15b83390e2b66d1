#include "transport_meta/run.hpp"

#include "transport_meta/error.hpp"
#include "transport_meta/inference.hpp"
#include "transport_meta/transport.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

namespace tmeta {

std::string_view tool_version() noexcept { return "0.1.0"; }

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) { fail(Errc::config, msg); }

enum class KeyType { string, integer, number, boolean, strings, integers, table, tables };

const std::map<std::string, KeyType>& key_types() {
  static const std::map<std::string, KeyType> keys = {
      {"seed", KeyType::integer},
      {"data.path", KeyType::string},
      {"schema.id", KeyType::string},
      {"schema.stratum", KeyType::string},
      {"schema.treatment", KeyType::string},
      {"schema.outcome", KeyType::string},
      {"schema.covariates", KeyType::strings},
      {"schema.categorical", KeyType::strings},
      {"schema.received", KeyType::string},
      {"schema.post_covariates", KeyType::strings},
      {"schema.target_benchmark", KeyType::boolean},
      {"analysis.kind", KeyType::string},
      {"analysis.z", KeyType::string},
      {"analysis.zprime", KeyType::string},
      {"analysis.a", KeyType::string},
      {"analysis.aprime", KeyType::string},
      {"analysis.trial", KeyType::integer},
      {"analysis.collection", KeyType::integers},
      {"analysis.restrict_collection", KeyType::boolean},
      {"analysis.level", KeyType::number},
      {"models.outcome", KeyType::strings},
      {"models.participation", KeyType::strings},
      {"models.tau", KeyType::strings},
      {"models.treatment", KeyType::string},
      {"models.treatment_design", KeyType::strings},
      {"models.known", KeyType::table},
      {"models.known_by_trial", KeyType::table},
      {"models.inner", KeyType::strings},
      {"models.outer", KeyType::strings},
      {"models.adherence", KeyType::strings},
      {"models.adherence_trial_indicators", KeyType::boolean},
      {"models.adherence_per_trial", KeyType::boolean},
      {"models.falsification", KeyType::strings},
      {"variance.method", KeyType::string},
      {"variance.replicates", KeyType::integer},
      {"variance.stratified", KeyType::boolean},
      {"variance.threads", KeyType::integer},
      {"variance.reproducible", KeyType::boolean},
      {"weights.truncate_odds_at", KeyType::number},
      {"weights.extreme_odds_warning", KeyType::number},
      {"falsification.restrict_to_target_support", KeyType::boolean},
      {"simulate.world", KeyType::string},
      {"simulate.n", KeyType::integer},
      {"results.path", KeyType::string},
      {"output.dir", KeyType::string},
      {"bias", KeyType::tables},
  };
  return keys;
}

bool is_section(const std::string& name) {
  for (const auto& [key, type] : key_types())
    if (key.rfind(name + ".", 0) == 0) return true;
  return false;
}

// Rejects keys the configuration does not define.
void check_keys(const toml::table& t, const std::string& prefix) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    const auto it = key_types().find(key);
    if (it != key_types().end()) continue;
    if (node.is_table() && is_section(key)) {
      check_keys(*node.as_table(), key);
      continue;
    }
    config_error("unknown configuration key '" + key + "'");
  }
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t comma = v.find(',', pos);
    if (comma == std::string_view::npos) comma = v.size();
    std::string item(v.substr(pos, comma - pos));
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view key, std::string_view v) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    config_error("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_number(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    config_error("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  return out;
}

// Typed lookups over the raw table.
class Reader {
 public:
  explicit Reader(const toml::table& t) : t_(t) {}

  const toml::node* node(const std::string& key) const { return t_.at_path(key).node(); }

  std::optional<std::string> string(const std::string& key) const {
    const auto* n = node(key);
    if (!n) return std::nullopt;
    if (auto s = n->value<std::string>()) return *s;
    if (n->is_integer()) return std::to_string(*n->value<std::int64_t>());
    config_error("'" + key + "' must be a string");
  }
  std::optional<std::int64_t> integer(const std::string& key) const {
    const auto* n = node(key);
    if (!n) return std::nullopt;
    if (!n->is_integer()) config_error("'" + key + "' must be an integer");
    return *n->value<std::int64_t>();
  }
  std::optional<double> number(const std::string& key) const {
    const auto* n = node(key);
    if (!n) return std::nullopt;
    auto v = n->value<double>();
    if (!v) config_error("'" + key + "' must be a number");
    return *v;
  }
  std::optional<bool> boolean(const std::string& key) const {
    const auto* n = node(key);
    if (!n) return std::nullopt;
    if (!n->is_boolean()) config_error("'" + key + "' must be true or false");
    return *n->value<bool>();
  }
  std::optional<std::vector<std::string>> strings(const std::string& key) const {
    const auto* n = node(key);
    if (!n) return std::nullopt;
    const auto* arr = n->as_array();
    if (!arr) config_error("'" + key + "' must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : *arr) {
      auto s = e.value<std::string>();
      if (!s) config_error("'" + key + "' must be an array of strings");
      out.push_back(*s);
    }
    return out;
  }
  std::optional<std::vector<int>> integers(const std::string& key) const {
    const auto* n = node(key);
    if (!n) return std::nullopt;
    const auto* arr = n->as_array();
    if (!arr) config_error("'" + key + "' must be an array of integers");
    std::vector<int> out;
    for (const auto& e : *arr) {
      if (!e.is_integer()) config_error("'" + key + "' must be an array of integers");
      out.push_back(static_cast<int>(*e.value<std::int64_t>()));
    }
    return out;
  }

 private:
  const toml::table& t_;
};

std::map<std::string, double> prob_table(const toml::table& t, const std::string& key) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : t) {
    auto p = v.value<double>();
    if (!p) config_error("'" + key + "." + std::string(k.str()) + "' must be a probability");
    out[std::string(k.str())] = *p;
  }
  return out;
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

}  // namespace

ConfigSource ConfigSource::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path.parent_path());
}

ConfigSource ConfigSource::from_string(std::string_view text, const std::filesystem::path& base_dir) {
  ConfigSource src;
  try {
    src.table_ = toml::parse(text);
  } catch (const toml::parse_error& e) {
    config_error("config TOML: " + std::string(e.description()) + " at line " +
                 std::to_string(e.source().begin.line));
  }
  check_keys(src.table_, "");
  src.base_dir_ = base_dir;
  return src;
}

void ConfigSource::set(std::string_view key_view, std::string_view value) {
  const std::string key(key_view);
  const auto it = key_types().find(key);
  if (it == key_types().end() || it->second == KeyType::table || it->second == KeyType::tables)
    config_error("unknown or non-settable configuration key '" + key + "'");

  // Walk/create the parent tables.
  toml::table* t = &table_;
  std::size_t pos = 0;
  std::string leaf = key;
  while (true) {
    const std::size_t dot = key.find('.', pos);
    if (dot == std::string::npos) {
      leaf = key.substr(pos);
      break;
    }
    const std::string part = key.substr(pos, dot - pos);
    auto* child = t->get_as<toml::table>(part);
    if (!child) {
      t->insert_or_assign(part, toml::table{});
      child = t->get_as<toml::table>(part);
    }
    t = child;
    pos = dot + 1;
  }

  switch (it->second) {
    case KeyType::string: {
      std::string v(value);
      // Command-line paths are relative to the working directory.
      if (key == "data.path" || key == "simulate.world" || key == "results.path")
        v = std::filesystem::absolute(std::filesystem::path(v)).lexically_normal().string();
      t->insert_or_assign(leaf, v);
      break;
    }
    case KeyType::integer: t->insert_or_assign(leaf, parse_int(key, value)); break;
    case KeyType::number: t->insert_or_assign(leaf, parse_number(key, value)); break;
    case KeyType::boolean:
      if (value == "true" || value == "1") t->insert_or_assign(leaf, true);
      else if (value == "false" || value == "0") t->insert_or_assign(leaf, false);
      else config_error("'" + key + "' expects true or false");
      break;
    case KeyType::strings: {
      toml::array arr;
      for (const auto& s : split_list(value)) arr.push_back(s);
      t->insert_or_assign(leaf, std::move(arr));
      break;
    }
    case KeyType::integers: {
      toml::array arr;
      for (const auto& s : split_list(value)) arr.push_back(parse_int(key, s));
      t->insert_or_assign(leaf, std::move(arr));
      break;
    }
    default: break;
  }
}

RunConfig ConfigSource::resolve() const {
  const Reader r(table_);
  RunConfig c;
  c.analysis = r.string("analysis.kind").value_or("");
  if (auto p = r.string("data.path")) c.data_path = resolve_path(base_dir_, *p);

  auto& s = c.schema;
  s.id = r.string("schema.id").value_or(s.id);
  s.stratum = r.string("schema.stratum").value_or(s.stratum);
  s.treatment = r.string("schema.treatment").value_or(s.treatment);
  s.outcome = r.string("schema.outcome").value_or(s.outcome);
  s.covariates = r.strings("schema.covariates").value_or(std::vector<std::string>{});
  s.categorical = r.strings("schema.categorical").value_or(std::vector<std::string>{});
  s.received = r.string("schema.received");
  s.post_covariates = r.strings("schema.post_covariates").value_or(std::vector<std::string>{});
  s.target_benchmark = r.boolean("schema.target_benchmark").value_or(false);

  c.contrast.z = r.string("analysis.z").value_or("");
  c.contrast.z_prime = r.string("analysis.zprime").value_or("");
  c.a = r.string("analysis.a");
  c.a_prime = r.string("analysis.aprime");
  if (auto t = r.integer("analysis.trial")) c.trial = static_cast<int>(*t);
  c.collection = r.integers("analysis.collection").value_or(std::vector<int>{});
  c.restrict_collection = r.boolean("analysis.restrict_collection").value_or(false);
  c.level = r.number("analysis.level").value_or(0.95);
  if (!(c.level > 0.0 && c.level < 1.0)) config_error("analysis.level must be in (0, 1)");

  c.terms.outcome = r.strings("models.outcome");
  c.terms.participation = r.strings("models.participation");
  c.terms.tau = r.strings("models.tau");
  c.terms.treatment = r.strings("models.treatment_design");
  c.terms.inner = r.strings("models.inner");
  c.terms.outer = r.strings("models.outer");
  c.terms.adherence = r.strings("models.adherence");
  c.terms.falsification = r.strings("models.falsification");
  const std::string treatment = r.string("models.treatment").value_or("estimated");
  if (treatment == "known") c.treatment_known = true;
  else if (treatment != "estimated") config_error("models.treatment must be 'estimated' or 'known'");
  if (const auto* k = r.node("models.known")) {
    if (!k->is_table()) config_error("models.known must be a table of arm probabilities");
    c.known = prob_table(*k->as_table(), "models.known");
  }
  if (const auto* k = r.node("models.known_by_trial")) {
    if (!k->is_table()) config_error("models.known_by_trial must be a table");
    for (const auto& [trial, probs] : *k->as_table()) {
      int id = 0;
      const std::string name(trial.str());
      auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), id);
      if (ec != std::errc() || ptr != name.data() + name.size() || !probs.is_table())
        config_error("models.known_by_trial entries must be keyed by trial id");
      c.known_by_trial[id] = prob_table(*probs.as_table(), "models.known_by_trial." + name);
    }
  }
  if (c.treatment_known && c.known.empty() && c.known_by_trial.empty())
    config_error("models.treatment = 'known' needs models.known or models.known_by_trial");
  c.adherence_trial_indicators = r.boolean("models.adherence_trial_indicators").value_or(true);
  c.adherence_per_trial = r.boolean("models.adherence_per_trial").value_or(false);

  const std::string method = r.string("variance.method").value_or("sandwich");
  if (method == "sandwich") c.variance = VarianceMethod::sandwich;
  else if (method == "bootstrap") c.variance = VarianceMethod::bootstrap;
  else if (method == "both") c.variance = VarianceMethod::both;
  else config_error("variance.method must be sandwich, bootstrap, or both");
  if (auto n = r.integer("variance.replicates")) {
    if (*n < 2) config_error("variance.replicates must be at least 2");
    c.replicates = static_cast<std::size_t>(*n);
  }
  if (auto seed = r.integer("seed")) c.seed = static_cast<std::uint64_t>(*seed);
  c.stratified = r.boolean("variance.stratified").value_or(true);
  if (auto t = r.integer("variance.threads")) {
    if (*t < 0) config_error("variance.threads must be nonnegative");
    c.threads = static_cast<std::size_t>(*t);
  }
  c.reproducible = r.boolean("variance.reproducible").value_or(true);

  if (auto q = r.number("weights.truncate_odds_at")) {
    if (!(*q > 0.0 && *q <= 1.0)) config_error("weights.truncate_odds_at must be a quantile in (0, 1]");
    c.weights.truncate_odds_quantile = *q;
  }
  c.weights.extreme_odds_warning = r.number("weights.extreme_odds_warning").value_or(c.weights.extreme_odds_warning);
  c.falsification.restrict_to_target_support =
      r.boolean("falsification.restrict_to_target_support").value_or(true);

  if (const auto* b = r.node("bias")) {
    const auto* arr = b->as_array();
    if (!arr) config_error("bias must be an array of tables ([[bias]])");
    for (const auto& e : *arr) {
      const auto* t = e.as_table();
      if (!t) config_error("bias must be an array of tables ([[bias]])");
      for (const auto& [k, v] : *t) {
        const std::string key(k.str());
        if (key != "trial" && key != "form" && key != "c" && key != "coef")
          config_error("unknown bias key '" + key + "'");
      }
      const Reader br(*t);
      BiasFunction u;
      auto trial = br.integer("trial");
      if (!trial) config_error("each [[bias]] needs a trial");
      u.trial = static_cast<int>(*trial);
      const std::string form = br.string("form").value_or("constant");
      if (form == "constant") {
        u.form = BiasFunction::Form::constant;
        u.constant = br.number("c").value_or(0.0);
      } else if (form == "linear") {
        u.form = BiasFunction::Form::linear;
        const auto* coef = t->get_as<toml::table>("coef");
        if (!coef) config_error("a linear bias function needs coef = { ... }");
        u.coefficients = prob_table(*coef, "bias.coef");
      } else {
        config_error("bias form must be 'constant' or 'linear'");
      }
      c.bias.push_back(std::move(u));
    }
  }

  if (auto w = r.string("simulate.world")) c.world_path = resolve_path(base_dir_, *w);
  if (auto n = r.integer("simulate.n")) {
    if (*n <= 0) config_error("simulate.n must be positive");
    c.sim_n = static_cast<std::size_t>(*n);
  }
  if (auto p = r.string("results.path")) c.results_path = resolve_path(base_dir_, *p);
  if (auto d = r.string("output.dir")) c.out_dir = resolve_path(base_dir_, *d);
  return c;
}

json RunConfig::echo() const {
  json j;
  j["analysis"] = analysis;
  j["data"] = data_path.filename().string();
  j["schema"] = {{"id", schema.id},
                 {"stratum", schema.stratum},
                 {"treatment", schema.treatment},
                 {"outcome", schema.outcome},
                 {"covariates", schema.covariates},
                 {"categorical", schema.categorical},
                 {"post_covariates", schema.post_covariates},
                 {"target_benchmark", schema.target_benchmark}};
  if (schema.received) j["schema"]["received"] = *schema.received;
  j["contrast"] = {{"z", contrast.z}, {"zprime", contrast.z_prime}};
  if (a) j["contrast"]["a"] = *a;
  if (a_prime) j["contrast"]["aprime"] = *a_prime;
  if (trial) j["trial"] = *trial;
  j["collection"] = collection;
  j["restrict_collection"] = restrict_collection;
  j["level"] = level;
  json models;
  auto put = [&](const char* name, const std::optional<std::vector<std::string>>& t) {
    models[name] = t ? json(*t) : json("main effects");
  };
  put("outcome", terms.outcome);
  put("participation", terms.participation);
  put("tau", terms.tau);
  put("treatment_design", terms.treatment);
  put("inner", terms.inner);
  put("outer", terms.outer);
  put("adherence", terms.adherence);
  put("falsification", terms.falsification);
  models["treatment"] = treatment_known ? "known" : "estimated";
  if (treatment_known) {
    models["known"] = known;
    json by_trial = json::object();
    for (const auto& [s, probs] : known_by_trial) by_trial[std::to_string(s)] = probs;
    models["known_by_trial"] = by_trial;
  }
  models["adherence_trial_indicators"] = adherence_trial_indicators;
  models["adherence_per_trial"] = adherence_per_trial;
  j["models"] = models;
  const char* method = variance == VarianceMethod::sandwich ? "sandwich"
                       : variance == VarianceMethod::bootstrap ? "bootstrap"
                                                               : "both";
  j["variance"] = {{"method", method}, {"replicates", replicates}, {"stratified", stratified}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["weights"] = {{"truncate_odds_at", weights.truncate_odds_quantile ? json(*weights.truncate_odds_quantile)
                                                                      : json(nullptr)},
                  {"extreme_odds_warning", weights.extreme_odds_warning}};
  j["falsification"] = {{"restrict_to_target_support", falsification.restrict_to_target_support}};
  json bias_j = json::array();
  for (const auto& u : bias) {
    json b = {{"trial", u.trial}, {"form", u.form == BiasFunction::Form::constant ? "constant" : "linear"}};
    if (u.form == BiasFunction::Form::constant) b["c"] = u.constant;
    else b["coef"] = u.coefficients;
    bias_j.push_back(b);
  }
  j["bias"] = bias_j;
  return j;
}

// ---------------------------------------------------------------------------
// Orchestration

CompositeDataset load_data(const RunConfig& config) {
  if (config.data_path.empty()) config_error("no data file given (data.path or --data)");
  return ingest_csv(config.data_path, config.schema);
}

namespace {

using EstimateFn = std::function<ContrastEstimate(const CompositeDataset&, const AnalysisOptions&)>;

struct Job {
  EstimateFn fn;
  // Sweep jobs record failures instead of aborting the run.
  bool soft = false;
  int trial = 0;
  Estimator estimator = Estimator::psi_te;
};

class Runner {
 public:
  Runner(const RunConfig& c, const CompositeDataset& d) : c_(c), d_(d) {
    if (c.analysis != "falsify" && c.analysis != "homogeneity" && c.analysis != "sensitivity" &&
        c.analysis != "per-protocol" && c.analysis != "single" && c.analysis != "sweep" && c.analysis != "pooled")
      config_error("unknown analysis '" + c.analysis + "'");
    if (c.contrast.z.empty() || c.contrast.z_prime.empty())
      fail(Errc::invalid_contrast, "the contrast needs both z and zprime");
    for (const auto* label : {&c.contrast.z, &c.contrast.z_prime})
      if (!d.treatment_code(*label))
        fail(Errc::invalid_contrast, "treatment label '" + *label + "' does not occur in the data");
    if (c.trial && (*c.trial < 1 || *c.trial > d.m()))
      fail(Errc::invalid_contrast, "trial " + std::to_string(*c.trial) + " is not in the data");
    if ((c.variance != VarianceMethod::sandwich) && !c.seed && c.reproducible)
      config_error("bootstrap variance needs a seed (seed or --seed) in reproducible mode");
    seed_ = c.seed ? *c.seed : std::random_device{}();

    opts_.level = c.level;
    opts_.weights = c.weights;
    opts_.sandwich = c.variance != VarianceMethod::bootstrap;
    point_opts_ = opts_;
    point_opts_.sandwich = false;

    treatment_.mode = c.treatment_known ? TreatmentModelSpec::Mode::known : TreatmentModelSpec::Mode::estimated;
    treatment_.design = design(c.terms.treatment);
    treatment_.known = c.known;
    treatment_.known_by_trial = c.known_by_trial;

    collection_ = c.collection;
    if (c.restrict_collection) {
      collection_ = restrict_collection(d, c.contrast);
      if (!c.collection.empty()) {
        std::vector<int> kept;
        for (int s : collection_)
          if (std::find(c.collection.begin(), c.collection.end(), s) != c.collection.end()) kept.push_back(s);
        collection_ = kept;
      }
    }
    doc_.tool_version = std::string(tool_version());
    doc_.analysis = c.analysis;
    doc_.config = c.echo();
    if (c.restrict_collection) doc_.config["resolved_collection"] = collection_;
  }

  ResultsDocument run() {
    const auto& a = c_.analysis;
    if (a == "single") single();
    else if (a == "sweep") sweep();
    else if (a == "pooled") pooled();
    else if (a == "falsify") falsify();
    else if (a == "homogeneity") homogeneity();
    else if (a == "sensitivity") sensitivity();
    else per_protocol();
    if (!failures_.empty()) doc_.diagnostics["failures"] = failures_;
    return std::move(doc_);
  }

 private:
  DesignSpec design(const std::optional<std::vector<std::string>>& terms) const {
    return terms ? DesignSpec::parse(*terms) : main_effects(d_);
  }

  int require_trial() const {
    if (!c_.trial) fail(Errc::invalid_contrast, "analysis '" + c_.analysis + "' needs a trial (--trial)");
    return *c_.trial;
  }

  SingleTrialConfig single_config() const {
    return {design(c_.terms.outcome), design(c_.terms.participation), treatment_, opts_};
  }

  // Runs one estimate with the configured variance method.
  void add(const Job& job) {
    try {
      ContrastEstimate est = job.fn(d_, opts_);
      attach_bootstrap(job.fn, est);
      doc_.estimates.push_back(std::move(est));
    } catch (const Error& e) {
      if (!job.soft || e.code() == Errc::config || e.code() == Errc::invalid_contrast) throw;
      record_failure(job.trial, job.estimator, e);
    }
  }

  void record_failure(int trial, Estimator est, const Error& e) {
    SweepFailure f{trial, est, std::string(errc_name(e.code())), e.what()};
    failures_.push_back(to_json(f));
    doc_.warnings.push_back((trial == 0 ? std::string("pooled") : "trial " + std::to_string(trial)) + " " +
                            std::string(estimator_name(est)) + " failed: " + f.code + ": " + f.message);
  }

  void attach_bootstrap(const EstimateFn& fn, ContrastEstimate& est) {
    if (c_.variance == VarianceMethod::sandwich) return;
    BootstrapConfig bc;
    bc.replicates = c_.replicates;
    bc.seed = seed_;
    bc.stratified = c_.stratified;
    bc.threads = c_.threads;
    bc.level = c_.level;
    const auto popts = point_opts_;
    const BootstrapResult r = bootstrap(d_, [&](const CompositeDataset& d) { return fn(d, popts).point; }, bc);
    BootstrapSummary s;
    s.requested = r.requested;
    s.effective = r.values.size();
    s.failed = r.failed;
    s.seed = seed_;
    s.stratified = c_.stratified;
    s.variance = r.variance;
    const double half = normal_quantile_two_sided(c_.level) * std::sqrt(std::max(0.0, r.variance));
    s.wald_lower = est.point - half;
    s.wald_upper = est.point + half;
    s.percentile_lower = r.percentile_lower;
    s.percentile_upper = r.percentile_upper;
    est.bootstrap = s;
    if (r.failed > 0)
      doc_.warnings.push_back("DroppedReplicates: " + std::to_string(r.failed) + " of " +
                              std::to_string(r.requested) + " bootstrap replicates failed for " + est.source + " " +
                              std::string(estimator_name(est.estimator)));
    if (c_.variance == VarianceMethod::bootstrap) {
      set_wald_interval(est, r.variance, c_.level);
      est.variance_method = "bootstrap";
    }
  }

  Job unadjusted_job(int stratum, bool soft) const {
    const Contrast ct = c_.contrast;
    return {[=](const CompositeDataset& d, const AnalysisOptions& o) { return unadjusted_trial_effect(d, stratum, ct, o); },
            soft, stratum, Estimator::unadjusted};
  }
  Job psi_te_job(int s, bool soft) const {
    const Contrast ct = c_.contrast;
    const DesignSpec od = design(c_.terms.outcome);
    return {[=](const CompositeDataset& d, const AnalysisOptions& o) { return estimate_psi_te(d, s, ct, od, o).estimate; },
            soft, s, Estimator::psi_te};
  }
  Job psi_w_job(int s, bool soft, const BiasFunction* bias = nullptr) const {
    const Contrast ct = c_.contrast;
    const DesignSpec pd = design(c_.terms.participation);
    const TreatmentModelSpec tm = treatment_;
    std::optional<BiasFunction> u;
    if (bias) u = *bias;
    return {[=](const CompositeDataset& d, const AnalysisOptions& o) {
              return estimate_psi_w(d, s, ct, pd, tm, o, u ? &*u : nullptr);
            },
            soft, s, Estimator::psi_w};
  }
  Job phi_te_job(bool soft) const {
    const Contrast ct = c_.contrast;
    const DesignSpec td = design(c_.terms.tau);
    const TreatmentModelSpec tm = treatment_;
    const auto coll = collection_;
    return {[=](const CompositeDataset& d, const AnalysisOptions& o) {
              return estimate_phi_te(d, ct, td, tm, o, coll).estimate;
            },
            soft, 0, Estimator::phi_te};
  }
  Job phi_w_job(bool soft) const {
    const Contrast ct = c_.contrast;
    const DesignSpec pd = design(c_.terms.participation);
    const TreatmentModelSpec tm = treatment_;
    const auto coll = collection_;
    return {[=](const CompositeDataset& d, const AnalysisOptions& o) { return estimate_phi_w(d, ct, pd, tm, o, coll); },
            soft, 0, Estimator::phi_w};
  }

  void add_benchmark() {
    if (d_.has_benchmark()) add(unadjusted_job(0, false));
  }

  void single() {
    const int s = require_trial();
    add(unadjusted_job(s, false));
    add(psi_te_job(s, false));
    add(psi_w_job(s, false));
    add_benchmark();
    doc_.diagnostics["positivity"] = to_json(positivity_report(d_, design(c_.terms.participation), {s}));
  }

  void sweep() {
    const auto trials = c_.collection.empty() ? d_.trials() : c_.collection;
    SingleTrialConfig sc = single_config();
    // Points and sandwich variances in parallel across trials.
    SweepResult r = per_trial_transport_sweep(d_, c_.contrast, sc, worker_count(c_.threads));
    for (int s : trials) {
      add(unadjusted_job(s, true));
      for (auto& est : r.estimates) {
        if (est.source != std::to_string(s)) continue;
        const Job job = est.estimator == Estimator::psi_te ? psi_te_job(s, true) : psi_w_job(s, true);
        try {
          attach_bootstrap(job.fn, est);
          doc_.estimates.push_back(std::move(est));
        } catch (const Error& e) {
          if (e.code() == Errc::config) throw;
          record_failure(s, job.estimator, e);
        }
      }
      for (const auto& f : r.failures) {
        if (f.trial != s) continue;
        failures_.push_back(to_json(f));
        doc_.warnings.push_back("trial " + std::to_string(f.trial) + " " + std::string(estimator_name(f.estimator)) +
                                " failed: " + f.code + ": " + f.message);
      }
    }
    add(phi_te_job(true));
    add(phi_w_job(true));
    add_benchmark();
  }

  void pooled() {
    add(phi_te_job(false));
    add(phi_w_job(false));
    add_benchmark();
    doc_.diagnostics["positivity"] = to_json(positivity_report(d_, design(c_.terms.participation), collection_));
  }

  void falsify() {
    const DesignSpec fd = c_.terms.falsification ? design(c_.terms.falsification) : design(c_.terms.tau);
    doc_.diagnostics["falsification"] =
        to_json(falsification_test(d_, c_.contrast, fd, treatment_, c_.falsification, collection_));
    doc_.diagnostics["positivity"] = to_json(positivity_report(d_, design(c_.terms.participation), collection_));
  }

  void homogeneity() {
    doc_.diagnostics["homogeneity"] =
        to_json(homogeneity_of_transported(d_, c_.contrast, design(c_.terms.outcome), collection_));
  }

  void sensitivity() {
    const int s = require_trial();
    if (c_.bias.empty()) config_error("sensitivity analysis needs at least one [[bias]] entry");
    const SingleTrialConfig sc = single_config();
    const Job te = psi_te_job(s, false);
    const Job w = psi_w_job(s, false);
    ContrastEstimate base_te = te.fn(d_, opts_);
    attach_bootstrap(te.fn, base_te);
    ContrastEstimate base_w = w.fn(d_, opts_);
    attach_bootstrap(w.fn, base_w);
    doc_.estimates.push_back(base_te);
    doc_.estimates.push_back(base_w);

    std::vector<BiasFunction> grid;
    for (const auto& u : c_.bias)
      if (u.trial == s) grid.push_back(u);
    if (grid.empty())
      fail(Errc::trial_mismatch, "no [[bias]] entry is for trial " + std::to_string(s));
    for (const auto& u : grid) {
      u.validate(d_);
      for (const ContrastEstimate* base : {&base_te, &base_w}) {
        ContrastEstimate adj = sensitivity_adjust(*base, d_, sc, u);
        if (c_.variance != VarianceMethod::sandwich) {
          const DesignSpec od = design(c_.terms.outcome);
          const Contrast ct = c_.contrast;
          EstimateFn fn;
          if (base->estimator == Estimator::psi_te) {
            fn = [=](const CompositeDataset& d, const AnalysisOptions& o) {
              auto e = estimate_psi_te(d, s, ct, od, o, &u).estimate;
              e.point += u.target_mean(d);
              return e;
            };
          } else {
            const Job wj = psi_w_job(s, false, &u);
            fn = [=](const CompositeDataset& d, const AnalysisOptions& o) {
              auto e = wj.fn(d, o);
              e.point += u.target_mean(d);
              return e;
            };
          }
          attach_bootstrap(fn, adj);
        }
        doc_.estimates.push_back(std::move(adj));
      }
    }

    // With one function per trial, report how far they are from making the
    // pooled constraint hold.
    std::map<int, int> per_trial;
    for (const auto& u : c_.bias) ++per_trial[u.trial];
    bool one_each = d_.m() >= 2 && static_cast<int>(per_trial.size()) == d_.m();
    for (const auto& [t, k] : per_trial) one_each = one_each && k == 1;
    if (one_each)
      doc_.diagnostics["constraint"] =
          to_json(pooled_bias_constraint_check(d_, c_.contrast, c_.bias, design(c_.terms.outcome)));
  }

  void per_protocol() {
    if (!c_.a || !c_.a_prime) fail(Errc::invalid_contrast, "per-protocol analysis needs a and aprime");
    const JointContrast jc{c_.contrast.z, *c_.a, c_.contrast.z_prime, *c_.a_prime};
    jc.validate();
    if (c_.trial) {
      const int s = *c_.trial;
      const DesignSpec inner = design(c_.terms.inner);
      const DesignSpec outer = design(c_.terms.outer);
      add({[=](const CompositeDataset& d, const AnalysisOptions& o) {
             return estimate_pp_te(d, s, jc, inner, outer, o).estimate;
           },
           false, s, Estimator::pp_te});
    }
    AdherenceModelSpec am{design(c_.terms.adherence), c_.adherence_trial_indicators, c_.adherence_per_trial};
    const DesignSpec pd = design(c_.terms.participation);
    const TreatmentModelSpec tm = treatment_;
    const auto coll = collection_;
    add({[=](const CompositeDataset& d, const AnalysisOptions& o) { return estimate_pp_w(d, jc, pd, tm, am, o, coll); },
         false, 0, Estimator::pp_w});
  }

  const RunConfig& c_;
  const CompositeDataset& d_;
  std::uint64_t seed_ = 0;
  AnalysisOptions opts_;
  AnalysisOptions point_opts_;
  TreatmentModelSpec treatment_;
  std::vector<int> collection_;
  ResultsDocument doc_;
  json failures_ = json::array();
};

}  // namespace

ResultsDocument run_analysis(const RunConfig& config, const CompositeDataset& data) {
  return Runner(config, data).run();
}

ResultsDocument run(const RunConfig& config) {
  if (config.analysis == "report") {
    if (config.results_path.empty()) config_error("report needs a results file (results.path or --results)");
    return load_results(config.results_path);
  }
  if (config.analysis == "simulate") config_error("simulate does not produce a results document");
  return run_analysis(config, load_data(config));
}

SimTruth run_simulation(const RunConfig& config) {
  if (config.world_path.empty()) config_error("simulate needs a world file (simulate.world or --world)");
  SimWorld world = load_world(config.world_path);
  if (!config.seed && config.reproducible) config_error("simulate needs a seed (seed or --seed) in reproducible mode");
  const std::uint64_t seed = config.seed ? *config.seed : std::random_device{}();
  const std::size_t n = config.sim_n ? *config.sim_n : world.n;
  Simulated sim = simulate(world, n, seed);
  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (ec) fail(Errc::io, "cannot create '" + config.out_dir.string() + "': " + ec.message());
  write_csv(config.out_dir / "data.csv", sim.data);
  std::ofstream out(config.out_dir / "truth.json", std::ios::binary);
  if (!out) fail(Errc::io, "cannot write truth.json");
  out << sim.truth.to_json();
  return sim.truth;
}

}  // namespace tmeta
