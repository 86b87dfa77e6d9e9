#ifndef BROKERSIM_H
#define BROKERSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_UTF8 = 2,
  BS_STATUS_INVALID_SCENARIO = 3,
  BS_STATUS_INVALID_ARGUMENT = 4,
  BS_STATUS_SIMULATION_FAILED = 5,
  BS_STATUS_PANIC = 6,
} BsStatus;

/**
 * Outcome of one simulation run.
 */
typedef struct BsRun BsRun;

/**
 * A validated scenario.
 */
typedef struct BsScenario BsScenario;

/**
 * Latency summary of a run. Fields are zero when no frame completed.
 */
typedef struct BsRunStats {
  bool stable;
  double e2e_mean;
  double e2e_p99;
  double wait_mean;
  double wait_fraction;
  double throughput;
  uint64_t completed_frames;
} BsRunStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *bs_last_error(void);

/**
 * Loads a builtin scenario by name or a TOML file by path.
 *
 * # Safety
 * `reference` must be a NUL-terminated string; `out` must be writable.
 */
enum BsStatus bs_scenario_load(const char *reference, struct BsScenario **out);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `document` must be a NUL-terminated string; `out` must be writable.
 */
enum BsStatus bs_scenario_parse(const char *document, struct BsScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void bs_scenario_free(struct BsScenario *scenario);

/**
 * Sets the acceleration factor (>= 1) used by later runs.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
enum BsStatus bs_scenario_set_acceleration(struct BsScenario *scenario, double factor);

/**
 * Closed-form stability at `factor`: writes whether every resource stays
 * below saturation and the largest utilization.
 *
 * # Safety
 * `scenario` must be a live handle; out pointers must be writable.
 */
enum BsStatus bs_predict_stability(const struct BsScenario *scenario,
                                   double factor,
                                   bool *out_stable,
                                   double *out_max_utilization);

/**
 * Overall speedup when a fraction `fraction` of the work runs `factor`
 * times faster. Infinity is accepted for `factor`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BsStatus bs_amdahl_speedup(double fraction, double factor, double *out);

/**
 * Runs the scenario for `horizon` virtual seconds, excluding the first
 * `warmup` seconds from statistics.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum BsStatus bs_simulate(const struct BsScenario *scenario,
                          uint64_t seed,
                          double horizon,
                          double warmup,
                          struct BsRun **out);

/**
 * # Safety
 * `run` must come from this library and not be used afterwards.
 */
void bs_run_free(struct BsRun *run);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum BsStatus bs_run_stats(const struct BsRun *run, struct BsRunStats *out);

/**
 * JSON summary of a run. Release with `bs_string_free`.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum BsStatus bs_run_summary_json(const struct BsRun *run, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void bs_string_free(char *s);

/**
 * Yearly cost of both shipped datacenter designs, in cents.
 *
 * # Safety
 * Out pointers must be writable.
 */
enum BsStatus bs_tco_yearly_cents(int64_t *out_homogeneous, int64_t *out_purpose_built);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BROKERSIM_H */
