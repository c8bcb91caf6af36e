#ifndef CSVL_H
#define CSVL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The numeric values follow the command-line exit codes
 * where they overlap.
 */
typedef enum CsvlStatus {
  CSVL_STATUS_OK = 0,
  CSVL_STATUS_NULL_POINTER = 1,
  CSVL_STATUS_INVALID_ARGUMENT = 2,
  CSVL_STATUS_DOMAIN_ERROR = 3,
  CSVL_STATUS_LIMIT_UNSTABLE = 4,
  CSVL_STATUS_REDUCED_INFEASIBLE = 5,
  CSVL_STATUS_NON_CONVERGENCE = 6,
  CSVL_STATUS_IO = 7,
  CSVL_STATUS_BUFFER_TOO_SMALL = 8,
  CSVL_STATUS_PANIC = 9,
} CsvlStatus;

/**
 * Parsed experiment config.
 */
typedef struct CsvlConfig CsvlConfig;

/**
 * Green function on a torus together with a vortex configuration.
 */
typedef struct CsvlGreen CsvlGreen;

/**
 * A converged solve: the smooth part `phi` and its diagnostics.
 */
typedef struct CsvlSolution CsvlSolution;

/**
 * Flat torus with its grid.
 */
typedef struct CsvlTorus CsvlTorus;

/**
 * Scalar diagnostics of a solution.
 */
typedef struct CsvlSolveSummary {
  double eps;
  double sup_v;
  double grid_max_v;
  double mean_u;
  double flux_defect;
  double final_residual;
  size_t newton_iterations;
} CsvlSolveSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL terminated)
 * and return its length without the terminator. With `buf` null or `len`
 * too small nothing is written; the return value is the size needed.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t csvl_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *csvl_version(void);

/**
 * `v = F^{-1}(u)` on the branch `v <= 0`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum CsvlStatus csvl_f_inverse(double u, double *out);

/**
 * Torus `[0, l1) x [0, l2)` with an `n x n` grid offset by half a cell.
 *
 * # Safety
 * `out` must be valid for one write. The handle is released with
 * [`csvl_torus_free`].
 */
enum CsvlStatus csvl_torus_new(double l1, double l2, size_t n, struct CsvlTorus **out);

/**
 * # Safety
 * `t` must be null or a handle from [`csvl_torus_new`] not yet freed.
 */
void csvl_torus_free(struct CsvlTorus *t);

/**
 * Green function with `count` vortex points given as `xy[2i], xy[2i+1]`
 * and multiplicities `mult[i]` (null means all 1).
 *
 * # Safety
 * `torus` must be a live handle, `xy` valid for `2 count` reads, `mult`
 * null or valid for `count` reads, `out` valid for one write.
 */
enum CsvlStatus csvl_green_new(const struct CsvlTorus *torus,
                               const double *xy,
                               const uint32_t *mult,
                               size_t count,
                               struct CsvlGreen **out);

/**
 * # Safety
 * `h` must be null or a live handle from [`csvl_green_new`].
 */
void csvl_green_free(struct CsvlGreen *h);

/**
 * `G(x, y)`; coincident points give [`CsvlStatus::DomainError`].
 *
 * # Safety
 * `h` must be a live handle, `out` valid for one write.
 */
enum CsvlStatus csvl_green_eval(const struct CsvlGreen *h,
                                double x0,
                                double x1,
                                double y0,
                                double y1,
                                double *out);

/**
 * `u0(x)` for the handle's vortex configuration.
 *
 * # Safety
 * `h` must be a live handle, `out` valid for one write.
 */
enum CsvlStatus csvl_green_u0(const struct CsvlGreen *h, double x0, double x1, double *out);

/**
 * `D(q)` at `k` centers `q[2i], q[2i+1]` (Voronoi partition).
 *
 * # Safety
 * `h` must be a live handle, `q` valid for `2 k` reads, `out` valid for
 * one write.
 */
enum CsvlStatus csvl_d_of_q(const struct CsvlGreen *h, const double *q, size_t k, double *out);

/**
 * Parse an experiment config from NUL-terminated UTF-8 text.
 *
 * # Safety
 * `text` must be a valid C string, `out` valid for one write. Release with
 * [`csvl_config_free`].
 */
enum CsvlStatus csvl_config_parse(const char *text, struct CsvlConfig **out);

/**
 * # Safety
 * `c` must be null or a live handle from [`csvl_config_parse`].
 */
void csvl_config_free(struct CsvlConfig *c);

/**
 * Write the 64-character hex config hash plus a NUL into `buf`, which
 * must hold at least 65 bytes.
 *
 * # Safety
 * `c` must be a live handle and `buf` valid for `len` bytes.
 */
enum CsvlStatus csvl_config_hash(const struct CsvlConfig *c, char *buf, size_t len);

/**
 * Maximal (topological) solution at `eps`.
 *
 * # Safety
 * `h` must be a live handle, `out` valid for one write. Release with
 * [`csvl_solution_free`].
 */
enum CsvlStatus csvl_solve_maximal(const struct CsvlGreen *h,
                                   double eps,
                                   struct CsvlSolution **out);

/**
 * # Safety
 * `s` must be null or a live handle from a solve call.
 */
void csvl_solution_free(struct CsvlSolution *s);

/**
 * # Safety
 * `s` must be a live handle, `out` valid for one write.
 */
enum CsvlStatus csvl_solution_summary(const struct CsvlSolution *s, struct CsvlSolveSummary *out);

/**
 * Copy the `n*n` grid values of `phi` (row-major) into `buf`.
 *
 * # Safety
 * `s` must be a live handle, `buf` valid for `len` writes.
 */
enum CsvlStatus csvl_solution_phi(const struct CsvlSolution *s, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSVL_H */
