#include "transport_meta/transport_meta.h"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string z;
  std::string zprime;
  std::string a;
  std::string aprime;
  std::optional<int> trial;
  std::string variance;
  std::optional<long long> boot_reps;
  std::optional<long long> seed;
  std::optional<long long> threads;
  bool restrict_collection = false;
  std::optional<double> truncate_odds_at;
  std::string out_dir;
  std::string world;
  std::optional<long long> n;
  std::string results;
  bool quiet = false;
};

int exit_code(tm_status s) {
  switch (s) {
    case TM_OK: return 0;
    case TM_ERR_CONFIG: return 2;
    case TM_ERR_DATA: return 3;
    case TM_ERR_ESTIMATION: return 4;
    case TM_ERR_IO: return 5;
    default: return 1;
  }
}

int report_error(tm_status s) {
  std::fprintf(stderr, "%s\n", tm_last_error());
  return exit_code(s);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "TOML configuration file");
  cmd->add_option("--data", o.data, "CSV data file");
  cmd->add_option("--z", o.z, "Treatment of interest");
  cmd->add_option("--zprime", o.zprime, "Comparator treatment");
  cmd->add_option("--trial", o.trial, "Trial id for single-trial analyses");
  cmd->add_option("--variance", o.variance, "Variance method")->check(CLI::IsMember({"sandwich", "bootstrap", "both"}));
  cmd->add_option("--boot-reps", o.boot_reps, "Bootstrap replicates");
  cmd->add_option("--seed", o.seed, "Seed for bootstrap and simulation");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  cmd->add_flag("--restrict-collection", o.restrict_collection, "Pool only trials that have both arms");
  cmd->add_option("--truncate-odds-at", o.truncate_odds_at, "Cap participation odds at this quantile");
  cmd->add_option("--out-dir", o.out_dir, "Directory for results.json, results.txt, forest.svg");
  cmd->add_flag("--quiet", o.quiet, "Do not print the results table");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transport randomized-trial effects to a target population"};
  app.set_version_flag("--version", std::string(tm_version()));
  app.require_subcommand(1);
  Options o;

  const std::vector<std::pair<std::string, std::string>> analyses = {
      {"single", "Transport one trial's effect (unadjusted, outcome model, weighting)"},
      {"sweep", "Transport every trial separately, plus the pooled estimates"},
      {"pooled", "Transport the collection of trials jointly"},
      {"falsify", "Test equality of conditional mean differences across trials"},
      {"homogeneity", "Test homogeneity of transported effects"},
      {"sensitivity", "Bias-function sensitivity analysis for one trial"},
      {"per-protocol", "Per-protocol effects under non-adherence"},
  };
  for (const auto& [name, help] : analyses) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    if (name == "per-protocol") {
      cmd->add_option("--a", o.a, "Received treatment under z");
      cmd->add_option("--aprime", o.aprime, "Received treatment under zprime");
    }
  }
  auto* sim = app.add_subcommand("simulate", "Draw a synthetic dataset from a world file");
  sim->add_option("--config", o.config, "TOML configuration file");
  sim->add_option("--world", o.world, "World TOML file");
  sim->add_option("--n", o.n, "Total sample size (overrides the world)");
  sim->add_option("--seed", o.seed, "Seed");
  sim->add_option("--out-dir", o.out_dir, "Directory for data.csv and truth.json");
  auto* rep = app.add_subcommand("report", "Render a saved results.json");
  rep->add_option("--results", o.results, "results.json to render")->required();
  rep->add_option("--out-dir", o.out_dir, "Directory for the rendered outputs");
  rep->add_flag("--quiet", o.quiet, "Do not print the results table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::string escaped;
    for (char c : msg) {
      if (c == '"' || c == '\\') escaped += '\\';
      if (c == '\n') {
        escaped += "\\n";
        continue;
      }
      escaped += c;
    }
    std::fprintf(stderr, "{\"code\":\"ConfigError\",\"message\":\"%s\",\"status\":2}\n", escaped.c_str());
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  tm_config* cfg = nullptr;
  tm_status st = o.config.empty() ? tm_config_new(&cfg) : tm_config_from_file(o.config.c_str(), &cfg);
  if (st != TM_OK) return report_error(st);

  std::vector<std::pair<std::string, std::string>> sets = {{"analysis.kind", command}};
  auto opt = [&](const char* key, const std::string& v) {
    if (!v.empty()) sets.emplace_back(key, v);
  };
  opt("data.path", o.data);
  opt("analysis.z", o.z);
  opt("analysis.zprime", o.zprime);
  opt("analysis.a", o.a);
  opt("analysis.aprime", o.aprime);
  if (o.trial) sets.emplace_back("analysis.trial", std::to_string(*o.trial));
  opt("variance.method", o.variance);
  if (o.boot_reps) sets.emplace_back("variance.replicates", std::to_string(*o.boot_reps));
  if (o.seed) sets.emplace_back("seed", std::to_string(*o.seed));
  if (o.threads) sets.emplace_back("variance.threads", std::to_string(*o.threads));
  if (o.restrict_collection) sets.emplace_back("analysis.restrict_collection", "true");
  if (o.truncate_odds_at) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *o.truncate_odds_at);
    sets.emplace_back("weights.truncate_odds_at", buf);
  }
  opt("output.dir", o.out_dir);
  opt("simulate.world", o.world);
  if (o.n) sets.emplace_back("simulate.n", std::to_string(*o.n));
  opt("results.path", o.results);
  for (const auto& [key, value] : sets) {
    st = tm_config_set(cfg, key.c_str(), value.c_str());
    if (st != TM_OK) {
      tm_config_free(cfg);
      return report_error(st);
    }
  }

  if (command == "simulate") {
    char* truth = nullptr;
    st = tm_simulate(cfg, &truth);
    tm_config_free(cfg);
    if (st != TM_OK) return report_error(st);
    std::fputs(truth, stdout);
    tm_string_free(truth);
    return 0;
  }

  tm_results* results = nullptr;
  st = tm_run(cfg, nullptr, &results);
  if (st != TM_OK) {
    tm_config_free(cfg);
    return report_error(st);
  }
  // NULL: the configured output.dir.
  st = tm_results_write(results, nullptr);
  tm_config_free(cfg);
  if (st != TM_OK) {
    tm_results_free(results);
    return report_error(st);
  }
  if (!o.quiet) std::fputs(tm_results_table(results), stdout);
  tm_results_free(results);
  return 0;
}
