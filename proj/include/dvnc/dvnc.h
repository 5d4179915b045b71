/* SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the discrete-valued neural communication library.
 * All functions return a dvnc_status; 0 means success. String outputs are
 * heap-allocated JSON documents that the caller releases with
 * dvnc_string_free(). On failure, dvnc_last_error() returns a thread-local
 * description of the most recent error.
 */
#ifndef DVNC_H
#define DVNC_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DVNC_API __declspec(dllexport)
#else
#define DVNC_API __attribute__((visibility("default")))
#endif

typedef enum dvnc_status {
  DVNC_OK = 0,
  DVNC_ERROR_RUNTIME = 1, /* unexpected internal failure */
  DVNC_ERROR_CONFIG = 2,  /* bad configuration, usage, or file format */
  DVNC_ERROR_NUMERIC = 3, /* numeric failure (NaN/Inf, divergence) */
} dvnc_status;

DVNC_API const char* dvnc_version(void);

/* Thread-local message for the most recent failing call. */
DVNC_API const char* dvnc_last_error(void);

DVNC_API void dvnc_string_free(char* s);

/* Runs a full training job described by config_json. out_dir (optional,
 * may be NULL) overrides the config's output directory and seed_override
 * (>= 0) overrides its seed. On success *summary_json_out receives a JSON
 * summary with checkpoint/metrics paths and evaluation records. */
DVNC_API dvnc_status dvnc_train(const char* config_json, const char* out_dir,
                                int64_t seed_override, char** summary_json_out);

/* Opaque handle to a model loaded from a checkpoint. */
typedef struct dvnc_model dvnc_model;

DVNC_API dvnc_status dvnc_model_open(const char* checkpoint_path, dvnc_model** out);
DVNC_API void dvnc_model_close(dvnc_model* model);

/* Evaluates the model on a task spec JSON; *metrics_json_out receives the
 * metrics record. */
DVNC_API dvnc_status dvnc_model_evaluate(dvnc_model* model, const char* task_json,
                                         char** metrics_json_out);

/* Evaluates the generalization-bound formulas for params_json and writes a
 * JSON report with both bound values and their radicand log-ratio. */
DVNC_API dvnc_status dvnc_bounds_evaluate(const char* params_json,
                                          char** report_json_out);

/* Runs the Monte Carlo concentration check described by spec_json and writes
 * a JSON report including the any-combination violation rate. */
DVNC_API dvnc_status dvnc_concentration_check(const char* spec_json,
                                              char** report_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DVNC_H */
