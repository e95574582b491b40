#ifndef CRQ_H
#define CRQ_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrqStatus {
  CRQ_STATUS_OK = 0,
  CRQ_STATUS_NULL_POINTER = 1,
  CRQ_STATUS_INVALID_PARAMS = 2,
  CRQ_STATUS_DIMENSION = 3,
  CRQ_STATUS_NON_CONVERGENCE = 4,
  CRQ_STATUS_BRACKET_FAILURE = 5,
  CRQ_STATUS_DIVERGENCE = 6,
  CRQ_STATUS_DEGENERATE_LAMBDA = 7,
  CRQ_STATUS_PANIC = 8,
} CrqStatus;

/**
 * Opaque model parameters `(delta, rho, lambda, sigma2)`.
 */
typedef struct CrqParams CrqParams;

typedef struct CrqFixedPoint {
  double tau2;
  double gamma;
  double a;
  double residual_tau2;
  double residual_gamma;
} CrqFixedPoint;

typedef struct CrqCharacterization {
  double a_star;
  double tau2;
  double gamma;
  double alpha_bar;
  double beta_bar;
  double snr_bar;
  double sep;
} CrqCharacterization;

typedef struct CrqPrecodeInfo {
  double a_hat;
  double objective;
  size_t inner_iters;
  size_t outer_evals;
} CrqPrecodeInfo;

typedef struct CrqMcSummary {
  double sep_hat;
  double sep_ci;
  double sep_theory;
  double alpha_hat;
  double alpha_stderr;
  double var_hat;
  double var_stderr;
  uint64_t trials;
  uint64_t errors;
  uint64_t symbols;
} CrqMcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *crq_last_error_message(void);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *crq_status_name(enum CrqStatus status);

const char *crq_version(void);

/**
 * Creates a parameter handle. `rho = 0` selects the small-rho continuation.
 *
 * # Safety
 * `out` must be a valid pointer; the handle must be released with
 * [`crq_params_free`].
 */
enum CrqStatus crq_params_new(double delta,
                              double rho,
                              double lambda,
                              double sigma2,
                              struct CrqParams **out);

/**
 * Creates the SQUID preset `rho = 0`, `lambda = sigma2 K / N` for a
 * `K x N` system.
 *
 * # Safety
 * As for [`crq_params_new`].
 */
enum CrqStatus crq_params_new_squid(size_t n, size_t k, double sigma2, struct CrqParams **out);

/**
 * Releases a handle from [`crq_params_new`]. NULL is ignored.
 *
 * # Safety
 * `p` must be NULL or a live handle that is not used afterwards.
 */
void crq_params_free(struct CrqParams *p);

/**
 * Solves the scalar fixed point `(tau^2, gamma)` at box level `a`.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum CrqStatus crq_solve_fixed_point(const struct CrqParams *params,
                                     double a,
                                     struct CrqFixedPoint *out);

/**
 * Asymptotic risk `f(a)`.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum CrqStatus crq_risk(const struct CrqParams *params, double a, double *out);

/**
 * Minimizer `a*` of the asymptotic risk.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum CrqStatus crq_minimize_risk(const struct CrqParams *params, double *out);

/**
 * Full asymptotic characterization including the SEP prediction.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum CrqStatus crq_characterize(const struct CrqParams *params, struct CrqCharacterization *out);

/**
 * CRQ precoding of `s` (length `k`) through the row-major `k x n` channel
 * `h`. Writes the relaxed solution to `x_hat` (length `n`) and, when `x_t`
 * is not NULL, the quantized transmit vector. `delta` of the handle is not
 * used; only `rho` and `lambda` enter the finite-size problem.
 *
 * # Safety
 * Buffers must be valid for the stated lengths; `info` may be NULL.
 */
enum CrqStatus crq_precode(const struct CrqParams *params,
                           const double *h,
                           size_t k,
                           size_t n,
                           const double *s,
                           double *x_hat,
                           double *x_t,
                           struct CrqPrecodeInfo *info);

/**
 * Monte Carlo SEP experiment on an `n`-antenna, `k`-user system with the
 * convex precoder. The handle's `delta` must equal `k / n`.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum CrqStatus crq_sep_experiment(const struct CrqParams *params,
                                  size_t n,
                                  size_t k,
                                  uint64_t trials,
                                  uint64_t seed,
                                  struct CrqMcSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRQ_H */
