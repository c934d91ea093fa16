#ifndef TFLAB_TFLAB_H
#define TFLAB_TFLAB_H

#include <stddef.h>

#if defined(_WIN32)
#  if defined(TFLAB_BUILDING)
#    define TFLAB_API __declspec(dllexport)
#  else
#    define TFLAB_API __declspec(dllimport)
#  endif
#else
#  define TFLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns a status. On failure, tflab_last_error() holds a message
 * for the calling thread until its next failing call. */
typedef enum tflab_status {
  TFLAB_OK = 0,
  TFLAB_ERR_DIMENSION = 1,
  TFLAB_ERR_DOMAIN = 2,
  TFLAB_ERR_PARAMETER = 3,
  TFLAB_ERR_STATE = 4,
  TFLAB_ERR_FORMAT = 5,
  TFLAB_ERR_PARSE = 6,
  TFLAB_ERR_DATA = 7,
  TFLAB_ERR_IO = 8,
  TFLAB_ERR_USAGE = 9,
  TFLAB_ERR_TRAINING = 10,
  TFLAB_ERR_TASK = 11,
  TFLAB_ERR_CHECK_FAILED = 20, /* gradcheck ran but exceeded its tolerance */
  TFLAB_ERR_NULL_ARGUMENT = 30,
  TFLAB_ERR_INTERNAL = 99
} tflab_status;

TFLAB_API const char* tflab_version(void);
TFLAB_API const char* tflab_last_error(void);
TFLAB_API const char* tflab_status_name(tflab_status status);
/* Process exit code for a status: 0 ok, 2 usage, 1 otherwise. */
TFLAB_API int tflab_exit_code(tflab_status status);

/* ---- configuration ------------------------------------------------------ */

typedef enum tflab_key_type {
  TFLAB_KEY_INTEGER = 0,
  TFLAB_KEY_REAL = 1,
  TFLAB_KEY_TEXT = 2,
  TFLAB_KEY_FLAG = 3
} tflab_key_type;

TFLAB_API size_t tflab_key_count(void);
/* NULL when index is out of range. */
TFLAB_API const char* tflab_key_name(size_t index);
TFLAB_API const char* tflab_key_help(size_t index);
TFLAB_API const char* tflab_key_default(size_t index);
TFLAB_API tflab_key_type tflab_key_type_of(size_t index);

TFLAB_API size_t tflab_command_count(void);
TFLAB_API const char* tflab_command_name(size_t index);

typedef struct tflab_config tflab_config;

TFLAB_API tflab_status tflab_config_create(tflab_config** out);
TFLAB_API void tflab_config_destroy(tflab_config* config);
/* Command-line layer. Unknown keys and ill-typed values are rejected here. */
TFLAB_API tflab_status tflab_config_set(tflab_config* config, const char* key, const char* value);
/* Config-file layer given as text; replaces reading the "config" path. */
TFLAB_API tflab_status tflab_config_set_file_text(tflab_config* config, const char* text);
/* Seed layer below the file. Without this call TFLAB_SEED is read at resolve time. */
TFLAB_API tflab_status tflab_config_set_env_seed(tflab_config* config, const char* seed);
/* Merges the layers. Further set calls mark the config unresolved again. */
TFLAB_API tflab_status tflab_config_resolve(tflab_config* config);
/* Resolved value; the string stays valid until the config changes. */
TFLAB_API tflab_status tflab_config_get(const tflab_config* config, const char* key,
                                        const char** value);
/* Which layer supplied the value: flag, file, env, preset or default. */
TFLAB_API tflab_status tflab_config_source(const tflab_config* config, const char* key,
                                           const char** source);
TFLAB_API tflab_status tflab_config_to_text(const tflab_config* config, const char** text);

/* ---- pipelines ---------------------------------------------------------- */

/* Resolves the config if needed and runs one command. *summary receives
 * human-readable result lines owned by the config. */
TFLAB_API tflab_status tflab_run(const char* command, tflab_config* config, const char** summary);

/* Finite-difference check of the model described by a resolved config. */
TFLAB_API tflab_status tflab_gradcheck(const tflab_config* config, double* max_rel_error,
                                       size_t* coords_checked);

/* ---- series ------------------------------------------------------------- */

typedef struct tflab_series_set tflab_series_set;

TFLAB_API tflab_status tflab_series_load(const char* path, tflab_series_set** out);
/* Uses the kind, len, count, seed and process keys of a resolved config. */
TFLAB_API tflab_status tflab_series_synth(const tflab_config* config, tflab_series_set** out);
TFLAB_API void tflab_series_destroy(tflab_series_set* set);
TFLAB_API tflab_status tflab_series_count(const tflab_series_set* set, size_t* count);
TFLAB_API tflab_status tflab_series_id(const tflab_series_set* set, size_t index, const char** id);
TFLAB_API tflab_status tflab_series_values(const tflab_series_set* set, size_t index,
                                           const double** values, size_t* length);
TFLAB_API tflab_status tflab_series_save(const tflab_series_set* set, const char* path);

/* ---- statistics and metrics -------------------------------------------- */

/* max_lag < 0 selects the Schwert rule. */
TFLAB_API tflab_status tflab_adf(const double* y, size_t n, long max_lag, double* statistic);
TFLAB_API tflab_status tflab_hurst(const double* y, size_t n, double* hurst);
TFLAB_API tflab_status tflab_forecastability(const double* y, size_t n, double* value,
                                             int* degenerate);
TFLAB_API tflab_status tflab_mse(const double* truth, const double* pred, size_t n, double* out);
TFLAB_API tflab_status tflab_mae(const double* truth, const double* pred, size_t n, double* out);
TFLAB_API tflab_status tflab_sharpe(const double* returns, size_t n, double risk_free,
                                    double periods_per_year, double* out);
TFLAB_API tflab_status tflab_max_drawdown(const double* prices, size_t n, double* out);

/* ---- portfolio ---------------------------------------------------------- */

/* cov is row-major n x n; w receives n weights. */
TFLAB_API tflab_status tflab_min_variance_weights(const double* cov, size_t n, double* w);
TFLAB_API tflab_status tflab_markowitz_weights(const double* mean_returns, const double* cov,
                                               size_t n, double risk_aversion, double* w);

/* ---- model -------------------------------------------------------------- */

typedef struct tflab_model tflab_model;

/* Fresh model from the model keys and seed of a resolved config. */
TFLAB_API tflab_status tflab_model_create(const tflab_config* config, tflab_model** out);
TFLAB_API tflab_status tflab_model_load(const char* path, tflab_model** out);
TFLAB_API tflab_status tflab_model_save(const tflab_model* model, const char* path);
TFLAB_API void tflab_model_destroy(tflab_model* model);
TFLAB_API tflab_status tflab_model_param_count(const tflab_model* model, size_t* count);
TFLAB_API tflab_status tflab_model_channels(const tflab_model* model, size_t* channels);
TFLAB_API tflab_status tflab_model_patch_len(const tflab_model* model, size_t* patch_len);
/* context is row-major [channels x length] in the model's normalized units;
 * out receives [channels x horizon]. Length and horizon must be multiples of
 * the patch length. */
TFLAB_API tflab_status tflab_model_forecast(const tflab_model* model, const double* context,
                                            size_t channels, size_t length, size_t horizon,
                                            double* out);

#ifdef __cplusplus
}
#endif

#endif
