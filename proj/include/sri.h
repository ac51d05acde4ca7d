#ifndef SRI_H
#define SRI_H

/* C interface to the surrogate representation inference toolkit.
 *
 * Conventions:
 *   - Every fallible call returns an sri_status; SRI_OK means success.
 *   - On failure, sri_last_error() holds a message for the calling thread
 *     until its next failing call.
 *   - Output strings (char** parameters) are allocated by the library and
 *     must be released with sri_string_free().
 *   - Handles are opaque; free them with their matching *_free function.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sri_status {
    SRI_OK = 0,
    SRI_ERR_INVALID_ARGUMENT = 1, /* a documented precondition was violated */
    SRI_ERR_PARSE = 2,            /* malformed CSV, JSON, or plan text */
    SRI_ERR_NUMERIC = 3,          /* a numerical procedure failed */
    SRI_ERR_IO = 4,               /* file could not be read or written */
    SRI_ERR_UNKNOWN = 5
} sri_status;

/* Semantic version of the library. Static storage; do not free. */
const char* sri_version(void);

/* Message from this thread's most recent failing call, or "" when none has
 * failed yet. Static storage; do not free. */
const char* sri_last_error(void);

/* Releases a string returned through a char** output parameter. Accepts
 * NULL. */
void sri_string_free(char* text);

/* ------------------------------------------------------------------ */
/* Datasets                                                            */

typedef struct sri_dataset sri_dataset;

/* Loads the documented CSV layout (header t,s,z_*,y_*,l_*,gold,pred). */
sri_status sri_dataset_load_csv(const char* path, sri_dataset** out);

void sri_dataset_free(sri_dataset* dataset);

/* Unit count, embedding width, and coder count; -1 on a NULL handle. */
int64_t sri_dataset_n(const sri_dataset* dataset);
int sri_dataset_d(const sri_dataset* dataset);
int sri_dataset_num_coders(const sri_dataset* dataset);

/* ------------------------------------------------------------------ */
/* Estimation                                                          */

/* Runs one estimator and returns its JSON summary. `estimator` is one of
 * "sri", "sri_perfect", "sri_noisy", "naive", "ppi", or "dsl"; the plain
 * "sri" resolves to the noisy variant when the dataset has two or more
 * coders and the perfect one otherwise. The baselines require the CSV's
 * optional pred column. k and seed drive the cross-fitting estimators and
 * are ignored by the baselines. */
sri_status sri_estimate(const sri_dataset* dataset, const char* estimator, int k,
                        uint64_t seed, char** json_out);

/* ------------------------------------------------------------------ */
/* Diagnostics                                                         */

/* Runs the full diagnostic battery: the equivalence permutation test with
 * b permutations on pca_dims components, the within-stratum agreement
 * check (stratified by integer covariate z_column, or pooled when it is
 * -1), and one confusion-matrix accuracy check per coder. The result is a
 * JSON object with keys "equivalence", "agreement", and "accuracy".
 *
 * When has_delta is 0 the test still reports the equivalence interval and
 * permutation distribution, but p_value and delta are null: the margin is
 * a substantive choice the caller must make explicitly. */
sri_status sri_diagnose(const sri_dataset* dataset, int has_delta, double delta, int b,
                        int pca_dims, uint64_t seed, int z_column, char** json_out);

/* ------------------------------------------------------------------ */
/* Simulation harness                                                  */

/* Loads a plan file, runs the Monte Carlo study, and writes the report CSV
 * to report_csv_path (plus the per-replication raw CSV when
 * raw_csv_path is non-NULL). workers <= 0 defers to the SRI_WORKERS
 * environment variable and then the hardware; timings != 0 fills the
 * runtime columns at the cost of byte-identical reruns. */
sri_status sri_simulate_plan_file(const char* plan_path, const char* report_csv_path,
                                  const char* raw_csv_path, int workers, int timings);

/* Renders a report CSV file as an aligned text table. */
sri_status sri_render_report(const char* report_csv_path, char** text_out);

#ifdef __cplusplus
}
#endif

#endif /* SRI_H */
