#ifndef VVAAS_H
#define VVAAS_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VvaasStatus {
  VVAAS_STATUS_OK = 0,
  VVAAS_STATUS_NULL_ARGUMENT = 1,
  VVAAS_STATUS_INVALID_UTF8 = 2,
  VVAAS_STATUS_INVALID_ARGUMENT = 3,
  VVAAS_STATUS_CONFIG = 4,
  VVAAS_STATUS_INVARIANT_VIOLATION = 5,
  VVAAS_STATUS_PANIC = 6,
} VvaasStatus;

/**
 * Result of one run.
 */
typedef struct VvaasReport VvaasReport;

/**
 * Parsed and validated scenario.
 */
typedef struct VvaasScenario VvaasScenario;

typedef struct VvaasSummary {
  uint64_t seed;
  uint32_t n_vehicles;
  uint64_t migrations_total;
  uint64_t to_vehicle;
  uint64_t to_rsu;
  uint64_t failed;
  double pct_to_vehicle;
  double pct_to_rsu;
  double mean_downtime_s;
  uint64_t vv_completed;
  uint64_t vv_failed;
  uint64_t vv_censored;
  double mean_remaining_time_sampled_s;
  /**
   * Non-zero when no migration succeeded and the percentages are 0.
   */
  uint8_t no_data;
} VvaasSummary;

typedef struct VvaasTransferPlan {
  uint32_t rounds;
  double live_duration_s;
  double stop_and_copy_mb;
  double downtime_s;
} VvaasTransferPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next call into this library on the same thread.
 */
const char *vvaas_last_error_message(void);

/**
 * Library version, a static string.
 */
const char *vvaas_version(void);

/**
 * Parses a TOML scenario. Relative paths inside it resolve against
 * `base_dir`, which may be null for the current directory.
 *
 * # Safety
 * `toml` and a non-null `base_dir` must be NUL-terminated strings; `out`
 * must be valid for writes.
 */
enum VvaasStatus vvaas_scenario_from_toml(const char *toml,
                                          const char *base_dir,
                                          struct VvaasScenario **out);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum VvaasStatus vvaas_scenario_load(const char *path, struct VvaasScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not be freed twice.
 */
void vvaas_scenario_free(struct VvaasScenario *scenario);

/**
 * Runs the scenario with `seed`.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be valid for writes.
 */
enum VvaasStatus vvaas_run(const struct VvaasScenario *scenario,
                           uint64_t seed,
                           struct VvaasReport **out);

/**
 * # Safety
 * `report` must be a live handle; `out` must be valid for writes.
 */
enum VvaasStatus vvaas_report_summary(const struct VvaasReport *report, struct VvaasSummary *out);

/**
 * The report as CSV (header plus one row). Owned by the report.
 *
 * # Safety
 * `report` must be a live handle.
 */
const char *vvaas_report_csv(const struct VvaasReport *report);

/**
 * The JSON-lines event log. Owned by the report.
 *
 * # Safety
 * `report` must be a live handle.
 */
const char *vvaas_report_events(const struct VvaasReport *report);

/**
 * # Safety
 * `report` must come from this library and not be freed twice.
 */
void vvaas_report_free(struct VvaasReport *report);

/**
 * Heading sector 0..=7 for N, NE, E, SE, S, SW, W, NW.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum VvaasStatus vvaas_quantize_heading(double deg, uint8_t *out);

/**
 * Speed class 0 = slow, 1 = medium, 2 = fast.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum VvaasStatus vvaas_classify_speed(double kmh, uint8_t *out);

/**
 * Location band 0 = same, 1 = near, 2 = far.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum VvaasStatus vvaas_classify_location(double meters, uint8_t *out);

/**
 * Pre-copy transfer plan.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum VvaasStatus vvaas_plan_transfer(double image_mb,
                                     double dirty_rate_mbps,
                                     double bandwidth_mbps,
                                     uint32_t max_rounds,
                                     double stop_threshold_mb,
                                     struct VvaasTransferPlan *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VVAAS_H */
