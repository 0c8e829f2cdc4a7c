/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface of the spectrafuse library. Handles are opaque; every call
 * returns an sf_status and, on failure, leaves a message retrievable with
 * sf_last_error() on the calling thread.
 */
#ifndef SPECTRAFUSE_H
#define SPECTRAFUSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SF_API __declspec(dllexport)
#else
#define SF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sf_status {
  SF_OK = 0,
  SF_ERR_INVALID_ARGUMENT = 1, /* null pointer or malformed argument */
  SF_ERR_DIMENSION = 2,
  SF_ERR_CONTRACT = 3,
  SF_ERR_IO = 4,
  SF_ERR_PARSE = 5,
  SF_ERR_VERSION = 6, /* format version or configuration fingerprint */
  SF_ERR_BUFFER_TOO_SMALL = 7,
  SF_ERR_INTERNAL = 8
} sf_status;

typedef struct sf_config sf_config;
typedef struct sf_model sf_model;

/* Receives one line of JSON progress output. */
typedef void (*sf_line_fn)(const char* line, void* user);

SF_API const char* sf_version(void);
SF_API const char* sf_status_name(sf_status status);
/* Message of the most recent failure on this thread ("" if none). */
SF_API const char* sf_last_error(void);

/*
 * String outputs are copied into (buf, cap) with a terminating NUL. The
 * required size including the NUL is stored in *needed when non-null;
 * SF_ERR_BUFFER_TOO_SMALL if cap is insufficient.
 */

SF_API sf_status sf_config_new(sf_config** out);
SF_API sf_status sf_config_load(const char* path, sf_config** out);
SF_API sf_status sf_config_parse(const char* text, sf_config** out);
SF_API void sf_config_free(sf_config* cfg);
SF_API sf_status sf_config_set(sf_config* cfg, const char* key, const char* value);
/* "KEY=VALUE" */
SF_API sf_status sf_config_override(sf_config* cfg, const char* assignment);
SF_API sf_status sf_config_get(const sf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
SF_API sf_status sf_config_validate(const sf_config* cfg);
SF_API sf_status sf_config_to_text(const sf_config* cfg, char* buf, size_t cap, size_t* needed);
SF_API sf_status sf_config_fingerprint(const sf_config* cfg, uint64_t* out);

SF_API sf_status sf_model_init(const sf_config* cfg, sf_model** out);
SF_API sf_status sf_model_load(const sf_config* cfg, const char* path, sf_model** out);
SF_API sf_status sf_model_save(sf_model* model, const char* path);
SF_API void sf_model_free(sf_model* model);
/*
 * Answer logits for sample `index` of a dataset split. `subset` is "rgb",
 * "ir" or "rgb+ir"; null uses the sample's own tag. `variant` null means
 * "full". Writes up to `cap` values and the vocabulary size to *count.
 */
SF_API sf_status sf_model_logits(const sf_model* model, const char* data_dir, const char* split, size_t index,
                                 const char* subset, const char* variant, double* out, size_t cap, size_t* count);
SF_API sf_status sf_model_answer(const sf_model* model, const char* data_dir, const char* split, size_t index,
                                 const char* subset, const char* variant, char* buf, size_t cap, size_t* needed);

SF_API size_t sf_variant_count(void);
SF_API const char* sf_variant_name(size_t index);

SF_API sf_status sf_run_gen_data(const sf_config* cfg, const char* out_dir, sf_line_fn sink, void* user);
SF_API sf_status sf_run_pretrain_mae(const sf_config* cfg, const char* data_dir, const char* out_path,
                                     sf_line_fn sink, void* user);
/* init_path may be null or "" for a fresh model. */
SF_API sf_status sf_run_pretrain_lm(const sf_config* cfg, const char* init_path, const char* out_path,
                                    sf_line_fn sink, void* user);
SF_API sf_status sf_run_train(const sf_config* cfg, const char* data_dir, const char* init_path, const char* out_dir,
                              sf_line_fn sink, void* user);
/* `subset` null or "all" scores every tag. The report goes to the sink. */
SF_API sf_status sf_run_eval(const sf_config* cfg, const char* checkpoint, const char* data_dir, const char* subset,
                             const char* variant, sf_line_fn sink, void* user);
/* *failures receives the number of probed entries out of tolerance. */
SF_API sf_status sf_run_gradcheck(const sf_config* cfg, size_t max_per_param, sf_line_fn sink, void* user,
                                  size_t* failures);
SF_API sf_status sf_run_ablate(const sf_config* cfg, const char* data_dir, const char* init_path,
                               const char* variant, const char* out_dir, sf_line_fn sink, void* user);

#ifdef __cplusplus
}
#endif

#endif
