#ifndef CONTSCP_H
#define CONTSCP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C API.
 */
typedef enum ContscpStatus {
  CONTSCP_STATUS_OK = 0,
  CONTSCP_STATUS_NULL_POINTER = 1,
  CONTSCP_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed problem file or inconsistent settings.
   */
  CONTSCP_STATUS_CONFIG = 3,
  /**
   * The solver reported a numerical failure.
   */
  CONTSCP_STATUS_NUMERICAL = 4,
  /**
   * A caller buffer is too small; the required length was written.
   */
  CONTSCP_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * The requested quantity is not available for this solution.
   */
  CONTSCP_STATUS_UNAVAILABLE = 6,
  CONTSCP_STATUS_PANIC = 7,
} ContscpStatus;

/**
 * Opaque parsed problem file.
 */
typedef struct ContscpProblem ContscpProblem;

/**
 * Opaque solve result.
 */
typedef struct ContscpSolution ContscpSolution;

/**
 * Scalar summary of a solution.
 */
typedef struct ContscpSummary {
  /**
   * 1 when SCP converged or shooting succeeded.
   */
  int32_t converged;
  /**
   * 1 when the last trust-region constraint was inactive.
   */
  int32_t strict;
  size_t iterations;
  double final_time;
  double cost;
  double boundary_residual;
} ContscpSummary;

/**
 * Pontryagin residuals of a solution, `NaN` where not computed.
 */
typedef struct ContscpResiduals {
  double adjoint_defect;
  double maximality_gap;
  double transversality_endpoint;
  double transversality_time;
  double nontriviality_margin;
  double boundary_residual;
} ContscpResiduals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *contscp_version(void);

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *contscp_last_error(void);

/**
 * Parse a TOML problem description.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ContscpStatus contscp_problem_from_toml(const char *toml, struct ContscpProblem **out);

/**
 * Release a problem; null is ignored.
 *
 * # Safety
 * `problem` must come from [`contscp_problem_from_toml`] and not be used afterwards.
 */
void contscp_problem_free(struct ContscpProblem *problem);

/**
 * Number of states and controls of a problem.
 *
 * # Safety
 * All pointers must be valid.
 */
enum ContscpStatus contscp_problem_dims(const struct ContscpProblem *problem,
                                        size_t *states,
                                        size_t *controls);

/**
 * Run SCP (or shooting-accelerated SCP when enabled in the file).
 *
 * A non-converged run still yields a solution; inspect its summary.
 *
 * # Safety
 * `problem` and `out` must be valid pointers.
 */
enum ContscpStatus contscp_solve(const struct ContscpProblem *problem,
                                 struct ContscpSolution **out);

/**
 * Release a solution; null is ignored.
 *
 * # Safety
 * `solution` must come from [`contscp_solve`] and not be used afterwards.
 */
void contscp_solution_free(struct ContscpSolution *solution);

/**
 * # Safety
 * Both pointers must be valid.
 */
enum ContscpStatus contscp_solution_summary(const struct ContscpSolution *solution,
                                            struct ContscpSummary *out);

/**
 * Pontryagin residuals; `Unavailable` when the run did not converge.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum ContscpStatus contscp_solution_residuals(const struct ContscpSolution *solution,
                                              struct ContscpResiduals *out);

/**
 * Shape of the trajectory table: columns are `s_tilde, t`, the states,
 * the controls and, when available, one costate per state.
 *
 * # Safety
 * All pointers must be valid.
 */
enum ContscpStatus contscp_solution_table_shape(const struct ContscpSolution *solution,
                                                size_t *rows,
                                                size_t *cols);

/**
 * Copy the trajectory table row-major into `buf` of `len` doubles. On
 * `BufferTooSmall` the required length is written to `needed` (if non-null).
 *
 * # Safety
 * `buf` must hold `len` doubles; `needed` may be null.
 */
enum ContscpStatus contscp_solution_table(const struct ContscpSolution *solution,
                                          double *buf,
                                          size_t len,
                                          size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTSCP_H */
