#ifndef SCATTERFLOW_H
#define SCATTERFLOW_H

/* Generated by cbindgen. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Zero is success.
 */
typedef enum ScfStatus {
  SCF_STATUS_OK = 0,
  SCF_STATUS_NULL_POINTER = 1,
  SCF_STATUS_INVALID_UTF8 = 2,
  /**
   * Parse, coverage or parameter error.
   */
  SCF_STATUS_VALIDATION = 3,
  /**
   * Singular loop, non-invertible parametrization, non-finite state.
   */
  SCF_STATUS_NUMERICAL = 4,
  /**
   * Output buffer shorter than required.
   */
  SCF_STATUS_BUFFER_TOO_SMALL = 5,
  SCF_STATUS_PANIC = 6,
} ScfStatus;

typedef enum ScfMode {
  SCF_MODE_SYNCHRONOUS = 0,
  SCF_MODE_ASYNCHRONOUS = 1,
} ScfMode;

/**
 * Termination of a solve.
 */
typedef enum ScfRunStatus {
  SCF_RUN_STATUS_CONVERGED = 0,
  SCF_RUN_STATUS_MAX_ITERS = 1,
  SCF_RUN_STATUS_DIVERGED = 2,
} ScfRunStatus;

/**
 * Parsed problem.
 */
typedef struct ScfProblem ScfProblem;

/**
 * Solver output.
 */
typedef struct ScfSolution ScfSolution;

/**
 * Assembled scattering system.
 */
typedef struct ScfSystem ScfSystem;

/**
 * Solver options. Obtain defaults from [`scf_solve_options_default`].
 */
typedef struct ScfSolveOptions {
  enum ScfMode mode;
  /**
   * Firing probability in asynchronous mode.
   */
  double p;
  uint64_t seed;
  double tol;
  uint64_t max_iters;
} ScfSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *scf_last_error_message(void);

/**
 * Parses a problem from NUL-terminated TOML text.
 *
 * # Safety
 * `text` must be a valid C string and `out` a valid pointer.
 */
enum ScfStatus scf_problem_parse(const char *text, struct ScfProblem **out);

/**
 * Number of global indices, or 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
uintptr_t scf_problem_dim(const struct ScfProblem *problem);

/**
 * # Safety
 * `problem` must be null or a handle from [`scf_problem_parse`] not yet freed.
 */
void scf_problem_free(struct ScfProblem *problem);

/**
 * Derives the scattering system. The problem handle stays owned by the caller.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum ScfStatus scf_system_assemble(const struct ScfProblem *problem, struct ScfSystem **out);

/**
 * # Safety
 * `system` must be null or a handle from [`scf_system_assemble`] not yet freed.
 */
void scf_system_free(struct ScfSystem *system);

struct ScfSolveOptions scf_solve_options_default(void);

/**
 * Runs the executor from the zero state and recovers the solution.
 * A run that stops at the iteration cap or diverges still returns
 * `Ok` with a solution; inspect [`scf_solution_status`].
 *
 * # Safety
 * `system` must be a live handle, `options` null or valid, `out` valid.
 */
enum ScfStatus scf_system_solve(const struct ScfSystem *system,
                                const struct ScfSolveOptions *options,
                                struct ScfSolution **out);

/**
 * # Safety
 * `solution` must be a live handle.
 */
enum ScfRunStatus scf_solution_status(const struct ScfSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
uint64_t scf_solution_iterations(const struct ScfSolution *solution);

/**
 * Copies the primal vector `a★`. With `out` null only `*len` is written.
 *
 * # Safety
 * `out` must have room for `cap` values; `len` must be valid.
 */
enum ScfStatus scf_solution_primal(const struct ScfSolution *solution,
                                   double *out,
                                   uintptr_t cap,
                                   uintptr_t *len);

/**
 * Copies the dual vector `b★`. With `out` null only `*len` is written.
 *
 * # Safety
 * As for [`scf_solution_primal`].
 */
enum ScfStatus scf_solution_dual(const struct ScfSolution *solution,
                                 double *out,
                                 uintptr_t cap,
                                 uintptr_t *len);

/**
 * Copies the final wave state, `c` then `d`, each of length n.
 *
 * # Safety
 * `c` and `d` must each have room for `cap` values; `len` must be valid.
 */
enum ScfStatus scf_solution_waves(const struct ScfSolution *solution,
                                  double *c,
                                  double *d,
                                  uintptr_t cap,
                                  uintptr_t *len);

/**
 * Primal cost, dual cost and gap. Writes NaN when a block has no
 * recoverable cost.
 *
 * # Safety
 * `solution` must be a live handle; each output pointer may be null.
 */
enum ScfStatus scf_solution_costs(const struct ScfSolution *solution,
                                  double *primal,
                                  double *dual,
                                  double *gap);

/**
 * Primal and dual LI feasibility residuals (∞-norm).
 *
 * # Safety
 * `solution` must be a live handle; each output pointer may be null.
 */
enum ScfStatus scf_solution_residuals(const struct ScfSolution *solution,
                                      double *primal,
                                      double *dual);

/**
 * # Safety
 * `solution` must be null or a handle from [`scf_system_solve`] not yet freed.
 */
void scf_solution_free(struct ScfSolution *solution);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCATTERFLOW_H */
