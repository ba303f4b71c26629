#ifndef SUBNEUMANN_H
#define SUBNEUMANN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the nonzero values below 6 match the CLI exit codes.
typedef enum SnStatus {
  SN_STATUS_OK = 0,
  SN_STATUS_FAILED = 1,
  SN_STATUS_CONFIG = 2,
  SN_STATUS_INCOMPATIBLE_DATA = 3,
  SN_STATUS_NOT_CONVERGED = 4,
  SN_STATUS_CHECK_FAILURE = 5,
  SN_STATUS_NULL_POINTER = 6,
  SN_STATUS_INVALID_UTF8 = 7,
  SN_STATUS_BUFFER_TOO_SMALL = 8,
  SN_STATUS_OUT_OF_RANGE = 9,
  SN_STATUS_PANIC = 10,
} SnStatus;

// A configured Neumann problem.
typedef struct SnProblem SnProblem;

// Outcome of a check suite.
typedef struct SnReport SnReport;

// A computed minimizer.
typedef struct SnSolution SnSolution;

// Scalar summary of a solution.
typedef struct SnSolveInfo {
  double energy;
  double grad_norm;
  double tolerance;
  double c_emp;
  double delta_final;
  size_t iterations;
  int converged;
} SnSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sn_version(void);

// Message of the last failed call on this thread. `*needed` receives the
// size including the NUL; returns `BufferTooSmall` if `cap` is short.
//
// # Safety
// `buf` must be writable for `cap` bytes; `needed` may be null.
enum SnStatus sn_last_error(char *buf, size_t cap, size_t *needed);

// Builds a problem from TOML text. `base_dir` (nullable) resolves relative
// CSV paths; `seed_override` < 0 keeps the configured seed.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum SnStatus sn_problem_new(const char *toml,
                             const char *base_dir,
                             int64_t seed_override,
                             struct SnProblem **out);

// # Safety
// `p` must come from `sn_problem_new` (or be null) and not be used afterwards.
void sn_problem_free(struct SnProblem *p);

// Ambient dimension and node count.
//
// # Safety
// `p` must be a live handle; output pointers must be writable.
enum SnStatus sn_problem_shape(const struct SnProblem *p, size_t *dim, size_t *nodes);

// Coordinates of all nodes, row-major `nodes × dim`.
//
// # Safety
// `out` must be writable for `len` doubles.
enum SnStatus sn_problem_nodes(const struct SnProblem *p, double *out, size_t len);

// `<nu, 1> - ∫ f`.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum SnStatus sn_problem_compatibility(const struct SnProblem *p, double *out);

// Minimizes the energy with the configured solver options.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum SnStatus sn_solve(const struct SnProblem *p, struct SnSolution **out);

// # Safety
// `s` must come from `sn_solve` (or be null) and not be used afterwards.
void sn_solution_free(struct SnSolution *s);

// # Safety
// `s` must be a live handle and `out` writable.
enum SnStatus sn_solution_info(const struct SnSolution *s, struct SnSolveInfo *out);

// Nodal values of the minimizer (one per node).
//
// # Safety
// `out` must be writable for `len` doubles.
enum SnStatus sn_solution_values(const struct SnSolution *s, double *out, size_t len);

// Runs a check suite: `suite` is a comma-separated list, null for the
// configured suite. Returns `CheckFailure` (with `*out` set) when a check
// fails.
//
// # Safety
// `p` must be a live handle; `suite` null or NUL-terminated; `out` writable.
enum SnStatus sn_verify(const struct SnProblem *p, const char *suite, struct SnReport **out);

// # Safety
// `r` must come from `sn_verify` (or be null) and not be used afterwards.
void sn_report_free(struct SnReport *r);

// Number of checks and number that passed.
//
// # Safety
// `r` must be a live handle; output pointers writable.
enum SnStatus sn_report_counts(const struct SnReport *r, size_t *total, size_t *passed);

// Pass flag of check `index` (0-based): 1 pass, 0 fail.
//
// # Safety
// `r` must be a live handle and `pass` writable.
enum SnStatus sn_report_check(const struct SnReport *r, size_t index, int *pass);

// JSON rendering of the report (same body as the CLI writes); buffer
// rules as for `sn_last_error`.
//
// # Safety
// `buf` writable for `cap` bytes; `needed` may be null.
enum SnStatus sn_report_json(const struct SnReport *r, char *buf, size_t cap, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBNEUMANN_H */
