#ifndef FEDAGG_H
#define FEDAGG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every exported call. Codes 2 to 4 match the CLI exit codes.
 */
typedef enum FedaggStatus {
  FEDAGG_STATUS_OK = 0,
  FEDAGG_STATUS_CONFIG = 2,
  FEDAGG_STATUS_NUMERICAL = 3,
  FEDAGG_STATUS_IO = 4,
  FEDAGG_STATUS_NULL_POINTER = 10,
  FEDAGG_STATUS_INVALID_ARGUMENT = 11,
  FEDAGG_STATUS_PANIC = 12,
} FedaggStatus;

/**
 * Validated run descriptor.
 */
typedef struct FedaggDescriptor FedaggDescriptor;

/**
 * Per-strategy results of a completed run.
 */
typedef struct FedaggReport FedaggReport;

/**
 * Mean and sample standard deviation of one strategy's run summaries.
 */
typedef struct FedaggSummary {
  double global_test_avg_mean;
  double global_test_avg_std;
  double local_avg_mean;
  double local_avg_std;
  double local_gen_mean;
  double local_gen_std;
  size_t runs;
} FedaggSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *fedagg_last_error_message(void);

/**
 * Parses and validates a TOML descriptor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FedaggStatus fedagg_descriptor_from_file(const char *path, struct FedaggDescriptor **out);

/**
 * Parses and validates descriptor text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum FedaggStatus fedagg_descriptor_from_str(const char *text, struct FedaggDescriptor **out);

/**
 * Replaces the descriptor's output directory.
 *
 * # Safety
 * `desc` must come from a `fedagg_descriptor_from_*` call; `dir` must be a
 * NUL-terminated string.
 */
enum FedaggStatus fedagg_descriptor_set_output_dir(struct FedaggDescriptor *desc, const char *dir);

/**
 * # Safety
 * `desc` must be null or come from a `fedagg_descriptor_from_*` call, and
 * must not be used afterwards.
 */
void fedagg_descriptor_free(struct FedaggDescriptor *desc);

/**
 * Runs every strategy and seed, writing the artifact tree.
 *
 * # Safety
 * `desc` must be a live descriptor; `out` must be writable.
 */
enum FedaggStatus fedagg_run(const struct FedaggDescriptor *desc, struct FedaggReport **out);

/**
 * Number of strategy rows in the report.
 *
 * # Safety
 * `report` must be a live report; `out` must be writable.
 */
enum FedaggStatus fedagg_report_len(const struct FedaggReport *report, size_t *out);

/**
 * Summary row `index`. `label` receives a pointer owned by the report.
 *
 * # Safety
 * `report` must be a live report; `label` and `out` must be writable.
 */
enum FedaggStatus fedagg_report_summary(const struct FedaggReport *report,
                                        size_t index,
                                        const char **label,
                                        struct FedaggSummary *out);

/**
 * # Safety
 * `report` must be null or come from [`fedagg_run`], and must not be used
 * afterwards.
 */
void fedagg_report_free(struct FedaggReport *report);

/**
 * Extra communication of weight learning relative to plain rounds:
 * `(K - 1) / (2 t0)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FedaggStatus fedagg_extra_comm_ratio(size_t clients, size_t interval, double *out);

/**
 * Mode of a Dirichlet distribution, `(beta_k - 1) / (sum beta - K)`.
 * Every `beta_k` must exceed 1.
 *
 * # Safety
 * `beta` and `out` must point to `len` values.
 */
enum FedaggStatus fedagg_dirichlet_mode(const double *beta, size_t len, double *out);

/**
 * Softmax of `len` unconstrained values.
 *
 * # Safety
 * `beta` and `out` must point to `len` values.
 */
enum FedaggStatus fedagg_softmax(const double *beta, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDAGG_H */
