#ifndef DDBH_H
#define DDBH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DdbhStatus {
  DDBH_STATUS_OK = 0,
  DDBH_STATUS_NULL_POINTER = 1,
  DDBH_STATUS_INVALID_UTF8 = 2,
  DDBH_STATUS_CONFIG = 3,
  DDBH_STATUS_RUNTIME = 4,
  DDBH_STATUS_OUT_OF_RANGE = 5,
  DDBH_STATUS_NOT_FOUND = 6,
  DDBH_STATUS_BUFFER_TOO_SMALL = 7,
  DDBH_STATUS_PANIC = 8,
} DdbhStatus;

/**
 * Output of a simulation or oracle run.
 */
typedef struct DdbhResult DdbhResult;

/**
 * Parsed scenario configuration.
 */
typedef struct DdbhScenario DdbhScenario;

/**
 * Occupation and equal-time correlation of one site.
 */
typedef struct DdbhSiteStats {
  double n;
  double n_err;
  /**
   * False when `g2` is not resolved above its error bar.
   */
  bool g2_defined;
  double g2;
  double g2_err;
} DdbhSiteStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ddbh_version(void);

/**
 * Copy the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must hold `cap` writable bytes or be null; `needed` must be null or writable.
 */
enum DdbhStatus ddbh_last_error(char *buf, size_t cap, size_t *needed);

/**
 * Parse a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DdbhStatus ddbh_scenario_from_toml(const char *toml, struct DdbhScenario **out);

/**
 * Load a named preset such as `"fig3"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DdbhStatus ddbh_scenario_from_preset(const char *name, struct DdbhScenario **out);

/**
 * # Safety
 * `sc` must come from this library and not be used afterwards. Null is ignored.
 */
void ddbh_scenario_free(struct DdbhScenario *sc);

/**
 * # Safety
 * `sc` must be a live scenario handle.
 */
enum DdbhStatus ddbh_scenario_set_seed(struct DdbhScenario *sc, uint64_t seed);

/**
 * # Safety
 * `sc` must be a live scenario handle.
 */
enum DdbhStatus ddbh_scenario_set_trajectories(struct DdbhScenario *sc, size_t n);

/**
 * Time step in units of `1 / gamma`.
 *
 * # Safety
 * `sc` must be a live scenario handle.
 */
enum DdbhStatus ddbh_scenario_set_dt(struct DdbhScenario *sc, double dt);

/**
 * # Safety
 * `sc` must be a live scenario handle and `n_sites` writable.
 */
enum DdbhStatus ddbh_scenario_n_sites(const struct DdbhScenario *sc, size_t *n_sites);

/**
 * Run the stochastic ensemble. `workers = 0` uses every core.
 *
 * # Safety
 * `sc` must be a live scenario handle and `out` writable.
 */
enum DdbhStatus ddbh_simulate(const struct DdbhScenario *sc,
                              bool deterministic,
                              size_t workers,
                              struct DdbhResult **out);

/**
 * Solve the master equation exactly.
 *
 * # Safety
 * `sc` must be a live scenario handle and `out` writable.
 */
enum DdbhStatus ddbh_oracle(const struct DdbhScenario *sc, struct DdbhResult **out);

/**
 * # Safety
 * `res` must come from this library and not be used afterwards. Null is ignored.
 */
void ddbh_result_free(struct DdbhResult *res);

/**
 * # Safety
 * `res` must be a live result handle.
 */
size_t ddbh_result_n_sites(const struct DdbhResult *res);

/**
 * Index of the site with the given label, e.g. `"3B"` or `"(3,3)B"`.
 *
 * # Safety
 * `res` must be a live result handle, `label` NUL-terminated and `index` writable.
 */
enum DdbhStatus ddbh_result_find_site(const struct DdbhResult *res,
                                      const char *label,
                                      size_t *index);

/**
 * # Safety
 * `res` must be a live result handle and `out` writable.
 */
enum DdbhStatus ddbh_result_site(const struct DdbhResult *res,
                                 size_t index,
                                 struct DdbhSiteStats *out);

/**
 * Copy the `g2(tau)` curve of site `index` for `tau >= 0`. Undefined points are NaN.
 * `len` receives the number of points; pass null buffers to query it.
 *
 * # Safety
 * `res` must be a live result handle; each non-null buffer must hold `cap` doubles.
 */
enum DdbhStatus ddbh_result_curve(const struct DdbhResult *res,
                                  size_t index,
                                  double *tau,
                                  double *g2,
                                  double *g2_err,
                                  size_t cap,
                                  size_t *len);

/**
 * Copy the JSON run summary into `buf`.
 *
 * # Safety
 * `res` must be a live result handle; `buf` must hold `cap` bytes or be null.
 */
enum DdbhStatus ddbh_result_summary_json(const struct DdbhResult *res,
                                         char *buf,
                                         size_t cap,
                                         size_t *needed);

/**
 * Optimal detuning and hopping of the three-site chain.
 *
 * # Safety
 * `delta_opt` and `j_opt` must be writable.
 */
enum DdbhStatus ddbh_optimal_params(double u, double gamma, double *delta_opt, double *j_opt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDBH_H */
