#include "transport_meta/transport_meta.h"

#include "transport_meta/error.hpp"
#include "transport_meta/run.hpp"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <optional>
#include <string>

struct tm_config {
  tmeta::ConfigSource source;
};

struct tm_dataset {
  tmeta::CompositeDataset data;
};

struct tm_results {
  tmeta::ResultsDocument doc;
  std::string json;
  std::string table;
  std::optional<std::string> svg;
  std::optional<std::string> text;
  std::vector<std::string> estimator_names;
  std::string out_dir;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_code;

tm_status status_of(tmeta::Errc code) {
  using tmeta::Errc;
  switch (code) {
    case Errc::config:
    case Errc::invalid_contrast:
    case Errc::unknown_stratum:
    case Errc::unknown_term:
    case Errc::duplicate_term:
    case Errc::trial_mismatch:
    case Errc::invalid_world: return TM_ERR_CONFIG;
    case Errc::missing_column:
    case Errc::non_numeric_value:
    case Errc::missing_covariate:
    case Errc::target_row_has_outcome:
    case Errc::trial_row_missing_outcome:
    case Errc::missing_adherence:
    case Errc::empty_stratum:
    case Errc::dimension_mismatch:
    case Errc::unknown_category: return TM_ERR_DATA;
    case Errc::io: return TM_ERR_IO;
    default: return TM_ERR_ESTIMATION;
  }
}

tm_status record(tm_status status, const std::string& code, const std::string& message) {
  last_code = code;
  nlohmann::json j = {{"status", static_cast<int>(status)}, {"code", code}, {"message", message}};
  last_error = j.dump();
  return status;
}

template <class F>
tm_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    last_code.clear();
    return TM_OK;
  } catch (const tmeta::Error& e) {
    return record(status_of(e.code()), std::string(tmeta::errc_name(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return record(TM_ERR_INTERNAL, "OutOfMemory", "out of memory");
  } catch (const std::exception& e) {
    return record(TM_ERR_INTERNAL, "InternalError", e.what());
  }
}

tm_status null_argument(const char* what) {
  return record(TM_ERR_ARGUMENT, "InvalidArgument", std::string(what) + " is null");
}

tm_results* make_results(tmeta::ResultsDocument doc, std::string out_dir = {}) {
  auto* r = new tm_results{std::move(doc), {}, {}, {}, {}, {}, std::move(out_dir)};
  r->json = tmeta::serialize(r->doc);
  r->table = tmeta::render_table(r->doc);
  if (!r->doc.estimates.empty()) {
    r->svg = tmeta::render_forest_svg(r->doc);
    r->text = tmeta::render_forest_text(r->doc);
  }
  for (const auto& e : r->doc.estimates) r->estimator_names.emplace_back(tmeta::estimator_name(e.estimator));
  return r;
}

}  // namespace

extern "C" {

const char* tm_version(void) {
  static const std::string v(tmeta::tool_version());
  return v.c_str();
}

const char* tm_last_error(void) { return last_error.c_str(); }
const char* tm_last_error_code(void) { return last_code.c_str(); }

tm_status tm_config_new(tm_config** out) {
  if (!out) return null_argument("out");
  return guarded([&] { *out = new tm_config{}; });
}

tm_status tm_config_from_file(const char* path, tm_config** out) {
  if (!path || !out) return null_argument(!path ? "path" : "out");
  return guarded([&] { *out = new tm_config{tmeta::ConfigSource::from_file(path)}; });
}

tm_status tm_config_from_string(const char* text, const char* base_dir, tm_config** out) {
  if (!text || !out) return null_argument(!text ? "toml_text" : "out");
  return guarded([&] {
    *out = new tm_config{tmeta::ConfigSource::from_string(text, base_dir ? base_dir : "")};
  });
}

tm_status tm_config_set(tm_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return null_argument(!config ? "config" : !key ? "key" : "value");
  return guarded([&] { config->source.set(key, value); });
}

void tm_config_free(tm_config* config) { delete config; }

tm_status tm_dataset_load(const tm_config* config, tm_dataset** out) {
  if (!config || !out) return null_argument(!config ? "config" : "out");
  return guarded([&] { *out = new tm_dataset{tmeta::load_data(config->source.resolve())}; });
}

tm_status tm_dataset_load_csv(const tm_config* config, const char* path, tm_dataset** out) {
  if (!config || !path || !out) return null_argument(!config ? "config" : !path ? "path" : "out");
  return guarded([&] {
    const auto rc = config->source.resolve();
    *out = new tm_dataset{tmeta::ingest_csv(path, rc.schema)};
  });
}

size_t tm_dataset_rows(const tm_dataset* data) { return data ? data->data.n() : 0; }
int tm_dataset_trials(const tm_dataset* data) { return data ? data->data.m() : 0; }
void tm_dataset_free(tm_dataset* data) { delete data; }

tm_status tm_run(const tm_config* config, const tm_dataset* data, tm_results** out) {
  if (!config || !out) return null_argument(!config ? "config" : "out");
  return guarded([&] {
    const auto rc = config->source.resolve();
    *out = make_results(data && rc.analysis != "report" ? tmeta::run_analysis(rc, data->data) : tmeta::run(rc),
                        rc.out_dir.string());
  });
}

tm_status tm_results_load(const char* path, tm_results** out) {
  if (!path || !out) return null_argument(!path ? "path" : "out");
  return guarded([&] { *out = make_results(tmeta::load_results(path)); });
}

const char* tm_results_json(const tm_results* results) { return results ? results->json.c_str() : ""; }
const char* tm_results_table(const tm_results* results) { return results ? results->table.c_str() : ""; }

tm_status tm_results_forest_svg(const tm_results* results, const char** out) {
  if (!results || !out) return null_argument(!results ? "results" : "out");
  if (!results->svg) return record(TM_ERR_ESTIMATION, "EmptyResults", "no estimates to plot");
  *out = results->svg->c_str();
  return TM_OK;
}

tm_status tm_results_forest_text(const tm_results* results, const char** out) {
  if (!results || !out) return null_argument(!results ? "results" : "out");
  if (!results->text) return record(TM_ERR_ESTIMATION, "EmptyResults", "no estimates to plot");
  *out = results->text->c_str();
  return TM_OK;
}

size_t tm_results_count(const tm_results* results) { return results ? results->doc.estimates.size() : 0; }

tm_status tm_results_estimate(const tm_results* results, size_t index, tm_estimate* out) {
  if (!results || !out) return null_argument(!results ? "results" : "out");
  if (index >= results->doc.estimates.size())
    return record(TM_ERR_ARGUMENT, "InvalidArgument", "estimate index out of range");
  const auto& e = results->doc.estimates[index];
  out->estimator = results->estimator_names[index].c_str();
  out->source = e.source.c_str();
  out->point = e.point;
  out->variance = e.variance;
  out->ci_lower = e.ci_lower;
  out->ci_upper = e.ci_upper;
  return TM_OK;
}

tm_status tm_results_write(const tm_results* results, const char* dir) {
  if (!results) return null_argument("results");
  if (!dir && results->out_dir.empty()) return null_argument("dir");
  return guarded([&] { tmeta::write_outputs(results->doc, dir ? std::string(dir) : results->out_dir); });
}

void tm_results_free(tm_results* results) { delete results; }

tm_status tm_simulate(const tm_config* config, char** truth_json) {
  if (!config) return null_argument("config");
  return guarded([&] {
    const auto truth = tmeta::run_simulation(config->source.resolve());
    if (truth_json) {
      const std::string j = truth.to_json();
      char* buf = static_cast<char*>(std::malloc(j.size() + 1));
      if (!buf) throw std::bad_alloc();
      std::memcpy(buf, j.c_str(), j.size() + 1);
      *truth_json = buf;
    }
  });
}

void tm_string_free(char* s) { std::free(s); }

}  // extern "C"
