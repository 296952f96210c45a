#ifndef BIS_ACCOUNTANT_H
#define BIS_ACCOUNTANT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BisSearchMode {
  BIS_SEARCH_MODE_CERTIFIED = 0,
  BIS_SEARCH_MODE_OPTIMISTIC = 1,
} BisSearchMode;

typedef enum BisStatus {
  BIS_STATUS_OK = 0,
  BIS_STATUS_NULL_POINTER = 1,
  BIS_STATUS_INVALID_ARGUMENT = 2,
  BIS_STATUS_SEARCH_FAILED = 3,
  BIS_STATUS_NUMERICAL = 4,
  BIS_STATUS_PANIC = 5,
} BisStatus;

/**
 * Opaque accounting configuration.
 */
typedef struct BisConfig BisConfig;

/**
 * Opaque noise search result.
 */
typedef struct BisSearchResult BisSearchResult;

typedef struct BisDeltaEstimate {
  double point;
  double upper_bound;
  uint64_t samples_used;
  uint64_t screened_out;
  uint64_t exact_evals;
  double sum_of_values;
  double sum_of_squares;
} BisDeltaEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *bis_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bis_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum BisStatus bis_config_new(size_t t,
                              size_t k,
                              double sigma,
                              double epsilon,
                              double delta_target,
                              uint64_t samples,
                              uint64_t seed,
                              double delta_split,
                              struct BisConfig **out);

/**
 * # Safety
 * `config` must come from [`bis_config_new`] and not be freed twice.
 */
void bis_config_free(struct BisConfig *config);

/**
 * Runs the Monte Carlo estimate. `threads = 0` uses every core.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum BisStatus bis_estimate_delta(const struct BisConfig *config,
                                  uint32_t threads,
                                  bool screening,
                                  struct BisDeltaEstimate *out);

/**
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum BisStatus bis_verify(const struct BisConfig *config, uint32_t threads, bool *out);

/**
 * # Safety
 * `out` must be writable; the result is released with
 * [`bis_search_result_free`].
 */
enum BisStatus bis_find_min_sigma(size_t t,
                                  size_t k,
                                  double epsilon,
                                  double delta_target,
                                  enum BisSearchMode mode,
                                  uint64_t samples,
                                  double delta_split,
                                  uint64_t seed,
                                  uint32_t threads,
                                  struct BisSearchResult **out);

/**
 * Minimal noise multiplier found, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double bis_search_result_sigma(const struct BisSearchResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
bool bis_search_result_is_certified(const struct BisSearchResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
uint64_t bis_search_result_total_samples(const struct BisSearchResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t bis_search_result_trace_len(const struct BisSearchResult *result);

/**
 * Copies trace entry `index`. Any of the out pointers may be null.
 *
 * # Safety
 * `result` must be a live handle; non-null out pointers must be writable.
 */
enum BisStatus bis_search_result_trace_entry(const struct BisSearchResult *result,
                                             size_t index,
                                             double *sigma,
                                             bool *passed,
                                             struct BisDeltaEstimate *estimate);

/**
 * Serialises the full result as JSON. Free with [`bis_string_free`].
 * Returns null for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
char *bis_search_result_to_json(const struct BisSearchResult *result);

/**
 * # Safety
 * `result` must come from [`bis_find_min_sigma`] and not be freed twice.
 */
void bis_search_result_free(struct BisSearchResult *result);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void bis_string_free(char *s);

/**
 * Exact `log P(y)/Q(y)` for log weights `log_w[0..len]` and `k` participations.
 *
 * # Safety
 * `log_w` must point to `len` readable doubles and `out` be writable.
 */
enum BisStatus bis_exact_log_ratio(const double *log_w, size_t len, size_t k, double *out);

/**
 * Screening upper bound `k log(mean w)`.
 *
 * # Safety
 * `log_w` must point to `len` readable doubles and `out` be writable.
 */
enum BisStatus bis_screening_log_ratio(const double *log_w, size_t len, size_t k, double *out);

/**
 * Analytic `delta(epsilon)` of a Gaussian mechanism.
 *
 * # Safety
 * `out` must be writable.
 */
enum BisStatus bis_gaussian_mechanism_delta(double sensitivity,
                                            double sigma,
                                            double epsilon,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIS_ACCOUNTANT_H */
