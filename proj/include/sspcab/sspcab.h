#ifndef SSPCAB_H
#define SSPCAB_H

#include <stddef.h>

#if defined(_WIN32)
#define SSPCAB_API __declspec(dllexport)
#else
#define SSPCAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns a status; on failure sspcab_last_error() holds
   a one-line diagnostic for the calling thread. */
typedef enum sspcab_status {
  SSPCAB_OK = 0,
  SSPCAB_ERR_INVALID_ARGUMENT = 1,
  SSPCAB_ERR_USAGE = 2,
  SSPCAB_ERR_CONFIG = 3,
  SSPCAB_ERR_SHAPE = 4,
  SSPCAB_ERR_FORMAT = 5,
  SSPCAB_ERR_UNSUPPORTED_VERSION = 6,
  SSPCAB_ERR_IO = 7,
  SSPCAB_ERR_PROTOCOL = 8,
  SSPCAB_ERR_METRIC = 9,
  SSPCAB_ERR_NUMERIC = 10,
  SSPCAB_ERR_CHECK_FAILED = 11,
  SSPCAB_ERR_INTERNAL = 12
} sspcab_status;

SSPCAB_API const char* sspcab_version(void);
SSPCAB_API const char* sspcab_status_name(sspcab_status status);
/* Valid until the next failing call on the same thread. */
SSPCAB_API const char* sspcab_last_error(void);

/* ---- run configuration ------------------------------------------------- */

typedef struct sspcab_config sspcab_config;

SSPCAB_API sspcab_status sspcab_config_create(sspcab_config** out);
SSPCAB_API void sspcab_config_destroy(sspcab_config* cfg);
/* key=value file; never overrides a key set with sspcab_config_set. */
SSPCAB_API sspcab_status sspcab_config_load_file(sspcab_config* cfg, const char* path);
SSPCAB_API sspcab_status sspcab_config_set(sspcab_config* cfg, const char* key, const char* value);
/* Copies the value with its terminator into buf when it fits; *needed (if
   non-null) receives the required size including the terminator. */
SSPCAB_API sspcab_status sspcab_config_get(const sspcab_config* cfg, const char* key, char* buf, size_t buf_len,
                                           size_t* needed);

/* ---- commands ---------------------------------------------------------- */

typedef void (*sspcab_line_fn)(const char* line, void* user);

SSPCAB_API sspcab_status sspcab_run_synth(const sspcab_config* cfg, sspcab_line_fn sink, void* user);
SSPCAB_API sspcab_status sspcab_run_train(const sspcab_config* cfg, sspcab_line_fn sink, void* user);
SSPCAB_API sspcab_status sspcab_run_score(const sspcab_config* cfg, sspcab_line_fn sink, void* user);
SSPCAB_API sspcab_status sspcab_run_eval(const sspcab_config* cfg, sspcab_line_fn sink, void* user);
/* SSPCAB_ERR_CHECK_FAILED when any component exceeds its tolerance. */
SSPCAB_API sspcab_status sspcab_run_gradcheck(const sspcab_config* cfg, sspcab_line_fn sink, void* user);

/* ---- models ------------------------------------------------------------ */

typedef struct sspcab_model sspcab_model;

/* Fresh model for height x width x channels inputs, seeded by the config. */
SSPCAB_API sspcab_status sspcab_model_create(const sspcab_config* cfg, size_t height, size_t width, size_t channels,
                                             sspcab_model** out);
SSPCAB_API sspcab_status sspcab_model_load(const char* path, sspcab_model** out);
SSPCAB_API sspcab_status sspcab_model_save(const sspcab_model* model, const char* path);
SSPCAB_API void sspcab_model_destroy(sspcab_model* model);
SSPCAB_API sspcab_status sspcab_model_input_shape(const sspcab_model* model, size_t* height, size_t* width,
                                                  size_t* channels);
/* images: n x height x width x channels doubles; maps: n x height x width. */
SSPCAB_API sspcab_status sspcab_model_anomaly_map(const sspcab_model* model, const double* images, size_t n,
                                                  double* maps);
SSPCAB_API sspcab_status sspcab_model_frame_scores(const sspcab_model* model, const double* images, size_t n,
                                                   double* scores);

/* ---- metrics ----------------------------------------------------------- */

/* labels are 0 (normal) or 1 (anomalous). */
SSPCAB_API sspcab_status sspcab_roc_auc(const double* scores, const int* labels, size_t n, double* out);
SSPCAB_API sspcab_status sspcab_average_precision(const double* scores, const int* labels, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif
