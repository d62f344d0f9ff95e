/* C interface to the marketplace recommender pipeline.
 *
 * Every function returns MRSYS_OK, MRSYS_VALIDATION_ERROR (bad input or
 * precondition, malformed file) or MRSYS_RUNTIME_ERROR (I/O failure,
 * divergence, internal fault). On failure mrsys_last_error() describes the
 * problem; the message is per thread and stays valid until the next call on
 * that thread. Strings returned through `char**` are owned by the caller and
 * released with mrsys_string_free.
 */
#ifndef MRSYS_H
#define MRSYS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MRSYS_API __declspec(dllexport)
#else
#define MRSYS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  MRSYS_OK = 0,
  MRSYS_VALIDATION_ERROR = 1,
  MRSYS_RUNTIME_ERROR = 2
};

typedef struct mrsys_config mrsys_config;
typedef struct mrsys_checkpoint mrsys_checkpoint;

MRSYS_API const char* mrsys_last_error(void);
MRSYS_API void mrsys_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

MRSYS_API int mrsys_config_new(mrsys_config** out);
/* Parses a `key = value` file; missing keys keep their defaults. */
MRSYS_API int mrsys_config_load(const char* path, mrsys_config** out);
MRSYS_API int mrsys_config_set(mrsys_config* cfg, const char* key, const char* value);
MRSYS_API int mrsys_config_validate(const mrsys_config* cfg);
/* Every key with its current value, one per line. */
MRSYS_API int mrsys_config_dump(const mrsys_config* cfg, char** out);
MRSYS_API void mrsys_config_free(mrsys_config* cfg);

/* ---- pipeline stages (workspace directory in, artifacts out) ---------- */

MRSYS_API int mrsys_generate(const mrsys_config* cfg, const char* dir);
MRSYS_API int mrsys_train_als(const mrsys_config* cfg, const char* dir);
MRSYS_API int mrsys_train_location(const mrsys_config* cfg, const char* dir);
MRSYS_API int mrsys_train_text(const mrsys_config* cfg, const char* dir);
MRSYS_API int mrsys_train_image(const mrsys_config* cfg, const char* dir);
MRSYS_API int mrsys_train_hybrid(const mrsys_config* cfg, const char* dir);
MRSYS_API int mrsys_train_seq(const mrsys_config* cfg, const char* dir);
/* mode: "row", "regression" or "deep". impressions may be NULL, in which
 * case an exploration feed is simulated and logged first. */
MRSYS_API int mrsys_fit_bandit(const mrsys_config* cfg, const char* dir, const char* mode, const char* impressions);

typedef struct {
  double hybrid_all, behavioral_all, content_all;
  double hybrid_warm, behavioral_warm, content_warm;
  size_t users_all, users_warm;
} mrsys_hr_summary;

MRSYS_API int mrsys_evaluate_hr(const mrsys_config* cfg, const char* dir, mrsys_hr_summary* out);
/* HR@n of precomputed lists (`user\titem,item,...`) against a test event file. */
MRSYS_API int mrsys_hit_rate_files(const char* recommendations, const char* test_events, size_t n, double* out);

typedef struct {
  uint64_t clicks_a, views_a, clicks_b, views_b;
  double ctr_a, ctr_b;
  int has_delta; /* 0 when arm A had no clicks */
  double delta_ctr;
  double p_value;
} mrsys_ab_summary;

MRSYS_API int mrsys_ab_sim(const mrsys_config* cfg, const char* dir, mrsys_ab_summary* out);
MRSYS_API int mrsys_report(const char* dir, char** out);

/* ---- checkpoints ------------------------------------------------------ */

MRSYS_API int mrsys_checkpoint_open(const char* path, mrsys_checkpoint** out);
MRSYS_API size_t mrsys_checkpoint_count(const mrsys_checkpoint* ckpt);
/* Name, rank and element count of record i (records sorted by name). */
MRSYS_API int mrsys_checkpoint_record(const mrsys_checkpoint* ckpt, size_t i, const char** name, size_t* rank,
                                      size_t* size);
MRSYS_API void mrsys_checkpoint_free(mrsys_checkpoint* ckpt);

#ifdef __cplusplus
}
#endif

#endif
