#ifndef ZRESID_H
#define ZRESID_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum ZrRegime {
  ZR_REGIME_NO_CV = 0,
  ZR_REGIME_K_FOLD = 1,
  ZR_REGIME_LOOCV = 2,
} ZrRegime;

/**
 * Status codes returned by every fallible call.
 */
typedef enum ZrStatus {
  ZR_STATUS_OK = 0,
  ZR_STATUS_NULL_POINTER = 1,
  ZR_STATUS_INVALID_INPUT = 2,
  ZR_STATUS_NOT_CONVERGED = 3,
  ZR_STATUS_IO = 4,
  ZR_STATUS_INTERNAL = 5,
} ZrStatus;

typedef enum ZrThetaMode {
  /**
   * Maximize the profile marginal likelihood over theta.
   */
  ZR_THETA_MODE_PROFILE = 0,
  /**
   * Ordinary Cox model.
   */
  ZR_THETA_MODE_NONE = 1,
  /**
   * Fixed theta given separately.
   */
  ZR_THETA_MODE_FIXED = 2,
} ZrThetaMode;

/**
 * Opaque survival dataset.
 */
typedef struct ZrDataset ZrDataset;

/**
 * Opaque fitted frailty model.
 */
typedef struct ZrFit ZrFit;

/**
 * Opaque residual set.
 */
typedef struct ZrResiduals ZrResiduals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *zr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *zr_version(void);

/**
 * Embedded kidney infection dataset.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum ZrStatus zr_dataset_kidney(struct ZrDataset **out);

/**
 * Load a CSV file. `numeric` lists numeric covariate columns;
 * `categorical` lists categorical covariates as `NAME=REF,LEVEL,...` with the
 * reference level first.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; the arrays must
 * hold the stated number of such strings; `out` must be writable.
 */
enum ZrStatus zr_dataset_load_csv(const char *path,
                                  const char *time_col,
                                  const char *status_col,
                                  const char *cluster_col,
                                  const char *const *numeric,
                                  size_t n_numeric,
                                  const char *const *categorical,
                                  size_t n_categorical,
                                  struct ZrDataset **out);

/**
 * Copy of `data` without the given row ids.
 *
 * # Safety
 * `data` must be a live handle, `rows` must hold `n_rows` values, and `out`
 * must be writable.
 */
enum ZrStatus zr_dataset_without_rows(const struct ZrDataset *data,
                                      const size_t *rows,
                                      size_t n_rows,
                                      struct ZrDataset **out);

/**
 * # Safety
 * `data` must be null or a handle from a `zr_dataset_*` constructor that has
 * not been freed.
 */
void zr_dataset_free(struct ZrDataset *data);

/**
 * Number of observations; 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t zr_dataset_n(const struct ZrDataset *data);

/**
 * # Safety
 * `data` must be null or a live handle.
 */
size_t zr_dataset_events(const struct ZrDataset *data);

/**
 * # Safety
 * `data` must be null or a live handle.
 */
size_t zr_dataset_clusters(const struct ZrDataset *data);

/**
 * Fit the shared gamma frailty model. `theta` is used only with
 * `ZrThetaMode::Fixed`.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
enum ZrStatus zr_fit(const struct ZrDataset *data,
                     enum ZrThetaMode mode,
                     double theta,
                     struct ZrFit **out);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
void zr_fit_free(struct ZrFit *fit);

/**
 * Number of coefficients; 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t zr_fit_n_coef(const struct ZrFit *fit);

/**
 * Frailty variance; NaN for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
double zr_fit_theta(const struct ZrFit *fit);

/**
 * Copy coefficients and standard errors into arrays of length `len`, which
 * must equal `zr_fit_n_coef`. Either output may be null.
 *
 * # Safety
 * Non-null outputs must have room for `len` doubles.
 */
enum ZrStatus zr_fit_coef(const struct ZrFit *fit, double *beta, double *se, size_t len);

/**
 * Write coefficient `i`'s name as a NUL-terminated string into `buf` of
 * `len` bytes. `*needed`, when non-null, receives the required size
 * including the terminator.
 *
 * # Safety
 * `buf` must be null or have room for `len` bytes.
 */
enum ZrStatus zr_fit_coef_name(const struct ZrFit *fit,
                               size_t i,
                               char *buf,
                               size_t len,
                               size_t *needed);

/**
 * Predicted survival probability at time `t` for expanded covariate row `x`
 * (length `zr_fit_n_coef`) in cluster `cluster`.
 *
 * # Safety
 * `x` must hold `p` doubles, `cluster` must be a NUL-terminated string, and
 * `out` must be writable.
 */
enum ZrStatus zr_fit_predict_survival(const struct ZrFit *fit,
                                      const double *x,
                                      size_t p,
                                      const char *cluster,
                                      double t,
                                      double *out);

/**
 * Z-residuals under the given regime. Fold and randomization seeds are
 * derived from `seed` exactly as the `zresid` command line does, so both
 * produce identical residuals. `k` is used only with `ZrRegime::KFold`.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
enum ZrStatus zr_residuals(const struct ZrDataset *data,
                           enum ZrRegime regime,
                           size_t k,
                           uint64_t seed,
                           enum ZrThetaMode mode,
                           double theta,
                           struct ZrResiduals **out);

/**
 * # Safety
 * `res` must be null or a live handle.
 */
void zr_residuals_free(struct ZrResiduals *res);

/**
 * Number of observations (including NA); 0 for a null handle.
 *
 * # Safety
 * `res` must be null or a live handle.
 */
size_t zr_residuals_len(const struct ZrResiduals *res);

/**
 * Z-residuals in row order, NaN where not available.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum ZrStatus zr_residuals_z(const struct ZrResiduals *res, double *out, size_t len);

/**
 * Randomized survival probabilities, NaN where not available.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum ZrStatus zr_residuals_rsp(const struct ZrResiduals *res, double *out, size_t len);

/**
 * Cox-Snell residuals, NaN where not available.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum ZrStatus zr_residuals_cs(const struct ZrResiduals *res, double *out, size_t len);

/**
 * Original row ids.
 *
 * # Safety
 * `out` must have room for `len` values.
 */
enum ZrStatus zr_residuals_row_ids(const struct ZrResiduals *res, size_t *out, size_t len);

/**
 * Shapiro-Wilk W and p-value for `n` values.
 *
 * # Safety
 * `x` must hold `n` doubles; `w` and `p` must be writable.
 */
enum ZrStatus zr_shapiro_wilk(const double *x, size_t n, double *w, double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZRESID_H */
