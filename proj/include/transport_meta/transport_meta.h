#ifndef TRANSPORT_META_H
#define TRANSPORT_META_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define TM_API __declspec(dllexport)
#else
#define TM_API __attribute__((visibility("default")))
#endif

typedef enum tm_status {
  TM_OK = 0,
  TM_ERR_CONFIG = 2,      /* bad configuration or contrast */
  TM_ERR_DATA = 3,        /* input data failed validation */
  TM_ERR_ESTIMATION = 4,  /* model fitting, positivity, variance */
  TM_ERR_IO = 5,
  TM_ERR_INTERNAL = 6,
  TM_ERR_ARGUMENT = 7     /* null handle or out-of-range index */
} tm_status;

typedef struct tm_config tm_config;
typedef struct tm_dataset tm_dataset;
typedef struct tm_results tm_results;

typedef struct tm_estimate {
  const char* estimator;
  const char* source;
  double point;
  double variance;
  double ci_lower;
  double ci_upper;
} tm_estimate;

TM_API const char* tm_version(void);

/* Last failure on the calling thread as a JSON object
   {"status": ..., "code": "...", "message": "..."}; "" if none. */
TM_API const char* tm_last_error(void);
/* Error code name of the last failure, e.g. "InvalidContrast". */
TM_API const char* tm_last_error_code(void);

TM_API tm_status tm_config_new(tm_config** out);
TM_API tm_status tm_config_from_file(const char* path, tm_config** out);
/* base_dir resolves relative paths in the text; may be NULL. */
TM_API tm_status tm_config_from_string(const char* toml_text, const char* base_dir, tm_config** out);
/* Dotted key ("analysis.z", "variance.replicates", "seed", ...). */
TM_API tm_status tm_config_set(tm_config* config, const char* key, const char* value);
TM_API void tm_config_free(tm_config* config);

/* Reads the CSV named by data.path with the config's schema. */
TM_API tm_status tm_dataset_load(const tm_config* config, tm_dataset** out);
TM_API tm_status tm_dataset_load_csv(const tm_config* config, const char* path, tm_dataset** out);
TM_API size_t tm_dataset_rows(const tm_dataset* data);
TM_API int tm_dataset_trials(const tm_dataset* data);
TM_API void tm_dataset_free(tm_dataset* data);

/* Runs the configured analysis. data may be NULL to load from the config;
   "report" reads results.path instead. */
TM_API tm_status tm_run(const tm_config* config, const tm_dataset* data, tm_results** out);
TM_API tm_status tm_results_load(const char* path, tm_results** out);

/* Returned strings live as long as the results handle. */
TM_API const char* tm_results_json(const tm_results* results);
TM_API const char* tm_results_table(const tm_results* results);
TM_API tm_status tm_results_forest_svg(const tm_results* results, const char** out);
TM_API tm_status tm_results_forest_text(const tm_results* results, const char** out);
TM_API size_t tm_results_count(const tm_results* results);
TM_API tm_status tm_results_estimate(const tm_results* results, size_t index, tm_estimate* out);
/* results.json, results.txt, forest.svg, forest.txt. dir may be NULL for
   results from tm_run: the configured output.dir is used. */
TM_API tm_status tm_results_write(const tm_results* results, const char* dir);
TM_API void tm_results_free(tm_results* results);

/* Writes data.csv and truth.json for the world named by simulate.world into
   output.dir; returns the truth JSON through truth_json if non-NULL (caller
   frees with tm_string_free). */
TM_API tm_status tm_simulate(const tm_config* config, char** truth_json);
TM_API void tm_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
