/* C interface to the latentflow surrogate library. Every function returns an
 * lf_status; on failure lf_last_error() describes the most recent error of the
 * calling thread. Handles are opaque and released with their _free function. */
#ifndef LATENTFLOW_H
#define LATENTFLOW_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LF_API __attribute__((visibility("default")))
#else
#define LF_API
#endif

typedef enum lf_status {
    LF_OK = 0,
    LF_ERR_INVALID_ARGUMENT = 1,
    LF_ERR_IO = 2,
    LF_ERR_BAD_MAGIC = 3,
    LF_ERR_TRUNCATED_PAYLOAD = 4,
    LF_ERR_HEADER_MISMATCH = 5,
    LF_ERR_SHAPE_MISMATCH = 6,
    LF_ERR_HASH_MISMATCH = 7,
    LF_ERR_DIVERGED = 8,
    LF_ERR_NOT_FOUND = 9,
    LF_ERR_DEGENERATE = 10,
    LF_ERR_CFL_VIOLATION = 11,
    LF_ERR_INTERNAL = 12
} lf_status;

typedef struct lf_config lf_config;
typedef struct lf_series lf_series;
typedef struct lf_surrogate lf_surrogate;

typedef struct lf_metrics {
    double error_ia;
    double error_vf;
    double w_ai;      /* mean rollout seconds */
    double w_cfd;     /* reference simulation seconds */
    double speedup;   /* S_W */
    int timing_valid; /* 0 in deterministic mode */
    int series;       /* evaluated test series */
} lf_metrics;

typedef struct lf_sweep_stats {
    int cells;
    int runs;
    int runs_ok;
    int runs_failed;
} lf_sweep_stats;

LF_API const char* lf_version(void);
LF_API const char* lf_status_name(lf_status status);
LF_API const char* lf_last_error(void);

/* Experiment configuration: defaults, then files and key=value overrides. */
LF_API lf_status lf_config_new(lf_config** out);
LF_API void lf_config_free(lf_config* cfg);
/* Replaces the configuration with the contents of an INI file. */
LF_API lf_status lf_config_load(lf_config* cfg, const char* path);
LF_API lf_status lf_config_set(lf_config* cfg, const char* key, const char* value);
/* Parses "key=value". */
LF_API lf_status lf_config_assign(lf_config* cfg, const char* assignment);
/* Copies the value into buf (NUL terminated); *needed receives the full length + 1. */
LF_API lf_status lf_config_get(const lf_config* cfg, const char* key, char* buf, size_t len, size_t* needed);
LF_API lf_status lf_config_hash(const lf_config* cfg, char* buf, size_t len);

/* Pipeline stages. stage is "lvm", "lin" or "e2e"; which is "classic" or "e2e". */
LF_API lf_status lf_gen_data(const lf_config* cfg, int workers);
LF_API lf_status lf_train(const lf_config* cfg, const char* stage, char* hash_buf, size_t hash_len);
LF_API lf_status lf_evaluate(const lf_config* cfg, const char* which, lf_metrics* out);
/* gen-data, lvm, lin, evaluate, and the e2e stage when enabled; e2e may be NULL. */
LF_API lf_status lf_run_pipeline(const lf_config* cfg, int workers, lf_metrics* classic, lf_metrics* e2e,
                                 int* has_e2e);
LF_API lf_status lf_sweep(const lf_config* cfg, int workers, lf_sweep_stats* out);
/* Writes report files into <run_dir>/report; the summary text is copied into buf if given. */
LF_API lf_status lf_report(const char* run_dir, char* buf, size_t len);

/* Frame archives. Frames are k*k row-major doubles, t is 1-indexed. */
LF_API lf_status lf_series_read(const char* path, lf_series** out);
LF_API lf_status lf_series_write(const lf_series* series, const char* path);
LF_API void lf_series_free(lf_series* series);
LF_API int lf_series_k(const lf_series* series);
LF_API int lf_series_steps(const lf_series* series);
LF_API double lf_series_velocity(const lf_series* series);
LF_API lf_status lf_series_frame(const lf_series* series, int t, double* out);

/* Trained LVM + LIN pair loaded from checkpoints. */
LF_API lf_status lf_surrogate_load(const char* lvm_path, const char* lin_path, lf_surrogate** out);
LF_API void lf_surrogate_free(lf_surrogate* s);
LF_API int lf_surrogate_k(const lf_surrogate* s);
LF_API int lf_surrogate_steps(const lf_surrogate* s);
/* Full rollout from g1 (k*k values) at inlet velocity v; frames receives steps*k*k values. */
LF_API lf_status lf_surrogate_rollout(const lf_surrogate* s, const double* g1, double v, int steps, double* frames,
                                      double* seconds);

/* Length of the iso-contour of a k*k field. */
LF_API lf_status lf_interfacial_area(const double* values, int k, double cell_size, double iso, double* out);

#ifdef __cplusplus
}
#endif

#endif
