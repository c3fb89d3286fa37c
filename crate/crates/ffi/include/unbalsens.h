#ifndef UNBALSENS_H
#define UNBALSENS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum UbsStatus {
  UBS_STATUS_OK = 0,
  /**
   * Null pointer, bad index or malformed string argument.
   */
  UBS_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Unreadable or invalid feeder, out-of-range tap.
   */
  UBS_STATUS_INPUT_ERROR = 2,
  /**
   * Non-convergence or a singular system.
   */
  UBS_STATUS_NUMERICAL_ERROR = 3,
  /**
   * The output buffer is shorter than required; nothing was written.
   */
  UBS_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * A panic was caught at the boundary.
   */
  UBS_STATUS_INTERNAL_ERROR = 5,
} UbsStatus;

/**
 * Selects one of the six sensitivity matrices: voltage magnitude or angle
 * with respect to active power, reactive power or regulator tap.
 */
typedef enum UbsMatrix {
  UBS_MATRIX_MAGNITUDE_P = 0,
  UBS_MATRIX_ANGLE_P = 1,
  UBS_MATRIX_MAGNITUDE_Q = 2,
  UBS_MATRIX_ANGLE_Q = 3,
  UBS_MATRIX_MAGNITUDE_TAP = 4,
  UBS_MATRIX_ANGLE_TAP = 5,
} UbsMatrix;

/**
 * A loaded feeder.
 */
typedef struct UbsNetwork UbsNetwork;

/**
 * A converged power flow solution.
 */
typedef struct UbsOperatingPoint UbsOperatingPoint;

/**
 * The six sensitivity matrices at one operating point.
 */
typedef struct UbsSensitivities UbsSensitivities;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ubs_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t ubs_last_error(char *buf, size_t len);

/**
 * Loads and validates a feeder file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum UbsStatus ubs_network_load(const char *path, struct UbsNetwork **out);

/**
 * Parses and validates feeder JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum UbsStatus ubs_network_parse(const char *json, struct UbsNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library that has not been freed.
 */
void ubs_network_free(struct UbsNetwork *net);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ubs_network_node_count(const struct UbsNetwork *net);

/**
 * Number of regulators, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ubs_network_regulator_count(const struct UbsNetwork *net);

/**
 * Copies the label of node `index` (e.g. `b2.a`) into `buf` as a
 * NUL-terminated string. `needed` (optional) receives the byte count
 * including the NUL.
 *
 * # Safety
 * `net` must be a live handle; `buf` must point to `len` writable bytes;
 * `needed` must be null or valid.
 */
enum UbsStatus ubs_network_node_label(const struct UbsNetwork *net,
                                      size_t index,
                                      char *buf,
                                      size_t len,
                                      size_t *needed);

/**
 * Solves the power flow. `taps` may be null to use the feeder's taps;
 * otherwise it holds one value per regulator. A non-positive `tolerance`
 * selects the default of 1e-10 p.u.
 *
 * # Safety
 * `net` must be a live handle, `taps` null or `n_taps` readable values, and
 * `out` a valid pointer.
 */
enum UbsStatus ubs_solve(const struct UbsNetwork *net,
                         const double *taps,
                         size_t n_taps,
                         double tolerance,
                         struct UbsOperatingPoint **out);

/**
 * # Safety
 * `op` must be null or a live handle.
 */
void ubs_operating_point_free(struct UbsOperatingPoint *op);

/**
 * Copies node voltage magnitudes (p.u.) and angles (rad); either buffer may
 * be null to skip it.
 *
 * # Safety
 * `op` must be a live handle; non-null buffers must hold `len` values.
 */
enum UbsStatus ubs_operating_point_voltages(const struct UbsOperatingPoint *op,
                                            double *magnitudes,
                                            double *angles,
                                            size_t len);

/**
 * Iterations used by the power flow, or 0 for a null handle.
 *
 * # Safety
 * `op` must be null or a live handle.
 */
size_t ubs_operating_point_iterations(const struct UbsOperatingPoint *op);

/**
 * Final power mismatch (p.u.), or NaN for a null handle.
 *
 * # Safety
 * `op` must be null or a live handle.
 */
double ubs_operating_point_mismatch(const struct UbsOperatingPoint *op);

/**
 * Computes all six sensitivity matrices at `op`.
 *
 * # Safety
 * `net` and `op` must be live handles, with `op` solved on `net`; `out` must
 * be a valid pointer.
 */
enum UbsStatus ubs_sensitivities_compute(const struct UbsNetwork *net,
                                         const struct UbsOperatingPoint *op,
                                         struct UbsSensitivities **out);

/**
 * # Safety
 * `sens` must be null or a live handle.
 */
void ubs_sensitivities_free(struct UbsSensitivities *sens);

/**
 * Writes the row and column counts of one matrix.
 *
 * # Safety
 * `sens` must be a live handle; `rows` and `cols` valid pointers.
 */
enum UbsStatus ubs_sensitivities_shape(const struct UbsSensitivities *sens,
                                       enum UbsMatrix which,
                                       size_t *rows,
                                       size_t *cols);

/**
 * Copies one matrix row-major into `out`, which must hold rows × cols values.
 *
 * # Safety
 * `sens` must be a live handle and `out` point to `len` writable values.
 */
enum UbsStatus ubs_sensitivities_matrix(const struct UbsSensitivities *sens,
                                        enum UbsMatrix which,
                                        double *out,
                                        size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNBALSENS_H */
