#ifndef LIMITCLASS_H
#define LIMITCLASS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_UTF8 = 2,
  LC_STATUS_INVALID_INPUT = 3,
  LC_STATUS_NUMERICAL = 4,
  /**
   * Classification ran but the report is flagged inconsistent.
   */
  LC_STATUS_FLAGGED = 5,
  LC_STATUS_BUFFER_TOO_SMALL = 6,
  LC_STATUS_PANIC = 7,
} LcStatus;

/**
 * Opaque expression handle.
 */
typedef struct LcExpression LcExpression;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next library call on this thread.
 */
const char *lc_last_error_message(void);

/**
 * Builds an expression of order `order` from coefficient strings.
 *
 * # Safety
 * `s` and `q` point to `n_s` and `n_q` NUL-terminated strings (either may be
 * null when its count is 0); `out` is a valid pointer.
 */
enum LcStatus lc_expression_new(uint32_t order,
                                const char *const *s,
                                uintptr_t n_s,
                                const char *const *q,
                                uintptr_t n_q,
                                double origin,
                                struct LcExpression **out);

/**
 * Releases an expression. Null is ignored.
 *
 * # Safety
 * `expr` was returned by [`lc_expression_new`] and is not used afterwards.
 */
void lc_expression_free(struct LcExpression *expr);

/**
 * Order of the expression, or 0 for a null handle.
 *
 * # Safety
 * `expr` is null or a live handle.
 */
uint32_t lc_expression_order(const struct LcExpression *expr);

/**
 * Writes `B(x)` row-major into `re` and `im`, each of length `len >= m*m`.
 *
 * # Safety
 * `re` and `im` point to at least `len` doubles.
 */
enum LcStatus lc_concomitant_matrix(const struct LcExpression *expr,
                                    double x,
                                    double *re,
                                    double *im,
                                    uintptr_t len);

/**
 * `[fg](x)` for derivative vectors `f`, `g` of length `m` given as real and
 * imaginary parts.
 *
 * # Safety
 * The four input arrays hold `m` doubles each; `out_re`, `out_im` are valid.
 */
enum LcStatus lc_bracket(const struct LcExpression *expr,
                         double x,
                         const double *f_re,
                         const double *f_im,
                         const double *g_re,
                         const double *g_im,
                         uintptr_t m,
                         double *out_re,
                         double *out_im);

/**
 * Classifies the problem in a JSON configuration and returns the report as
 * a JSON string in `out` (release with [`lc_string_free`]). Returns
 * `Flagged` with the report when it is inconsistent or unresolved.
 *
 * # Safety
 * `config_json` is a NUL-terminated string; `out` is a valid pointer.
 */
enum LcStatus lc_classify_config_json(const char *config_json, char **out);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` came from this library and is not used afterwards.
 */
void lc_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LIMITCLASS_H */
