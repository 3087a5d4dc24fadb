#ifndef SPARSITY_BHM_H
#define SPARSITY_BHM_H

/* Generated by cbindgen from the sparsity-bhm-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_ARGUMENT = 2,
  SB_STATUS_PARSE = 3,
  SB_STATUS_IO = 4,
  SB_STATUS_NON_CONVERGENCE = 5,
  SB_STATUS_NUMERICAL = 6,
  SB_STATUS_PANIC = 7,
} SbStatus;

typedef enum SbSigmaBand {
  SB_SIGMA_BAND_POOLED = 0,
  SB_SIGMA_BAND_DD1 = 1,
} SbSigmaBand;

/**
 * Posterior fit of one indicator lattice.
 */
typedef struct SbFit SbFit;

/**
 * Grayscale image.
 */
typedef struct SbImage SbImage;

/**
 * Thresholded coefficient lattice and its indicator.
 */
typedef struct SbSparse SbSparse;

/**
 * Field range, variance and IID precision.
 */
typedef struct SbTheta {
  double kappa;
  double sigma2;
  double tau_iid;
} SbTheta;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *sb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Loads a PGM (by `.pgm` extension) or a CSV matrix.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SbStatus sb_image_load(const char *path, struct SbImage **out);

/**
 * Copies `n1 * n2` row-major values into a new image.
 *
 * # Safety
 * `data` must point to `n1 * n2` readable doubles and `out` be valid.
 */
enum SbStatus sb_image_from_data(const double *data, size_t n1, size_t n2, struct SbImage **out);

/**
 * Seeded Shepp-Logan phantom with Gaussian noise.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SbStatus sb_image_phantom(size_t n1,
                               size_t n2,
                               double noise_sigma,
                               uint64_t seed,
                               struct SbImage **out);

/**
 * Rows of the image, 0 for a null handle.
 *
 * # Safety
 * `img` must be null or a live handle.
 */
size_t sb_image_rows(const struct SbImage *img);

/**
 * # Safety
 * `img` must be null or a live handle.
 */
size_t sb_image_cols(const struct SbImage *img);

/**
 * # Safety
 * `img` must be null or a handle not yet freed.
 */
void sb_image_free(struct SbImage *img);

/**
 * Three-level Haar transform and hard threshold. A null `threshold` uses
 * the universal threshold from the MAD noise estimate.
 *
 * # Safety
 * `img` must be a live handle, `threshold` null or readable, `out` valid.
 */
enum SbStatus sb_sparsify(const struct SbImage *img,
                          const double *threshold,
                          enum SbSigmaBand band,
                          struct SbSparse **out);

/**
 * Non-zero count `s`, 0 for a null handle.
 *
 * # Safety
 * `sp` must be null or a live handle.
 */
size_t sb_sparse_count(const struct SbSparse *sp);

/**
 * Pixel count `N`.
 *
 * # Safety
 * `sp` must be null or a live handle.
 */
size_t sb_sparse_len(const struct SbSparse *sp);

/**
 * Threshold applied, NaN for a null handle.
 *
 * # Safety
 * `sp` must be null or a live handle.
 */
double sb_sparse_threshold(const struct SbSparse *sp);

/**
 * MAD noise estimate, NaN for a null handle.
 *
 * # Safety
 * `sp` must be null or a live handle.
 */
double sb_sparse_sigma_hat(const struct SbSparse *sp);

/**
 * Copies the 0/1 indicator into `out`, which must hold exactly `len = N` bytes.
 *
 * # Safety
 * `sp` must be a live handle and `out` writable for `len` bytes.
 */
enum SbStatus sb_sparse_indicator(const struct SbSparse *sp, uint8_t *out, size_t len);

/**
 * # Safety
 * `sp` must be null or a handle not yet freed.
 */
void sb_sparse_free(struct SbSparse *sp);

/**
 * Fits the model to the indicator with default priors. A null `theta`
 * selects hyperparameters by empirical Bayes.
 *
 * # Safety
 * `sp` must be a live handle, `theta` null or readable, `out` valid.
 */
enum SbStatus sb_fit(const struct SbSparse *sp,
                     const struct SbTheta *theta,
                     uint64_t seed,
                     struct SbFit **out);

/**
 * `E(s)`, NaN for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
double sb_fit_estimate(const struct SbFit *fit);

/**
 * Log marginal likelihood plus log hyperprior at the fitted θ.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
double sb_fit_log_marginal(const struct SbFit *fit);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum SbStatus sb_fit_theta(const struct SbFit *fit, struct SbTheta *out);

/**
 * Copies the `N` posterior means `E(p_i|o)`.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable for `len` doubles.
 */
enum SbStatus sb_fit_p_mean(const struct SbFit *fit, double *out, size_t len);

/**
 * Copies the `N` posterior variances `Var(p_i|o)`.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable for `len` doubles.
 */
enum SbStatus sb_fit_p_var(const struct SbFit *fit, double *out, size_t len);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void sb_fit_free(struct SbFit *fit);

/**
 * `|a − b| · 100 / n` written to `out`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SbStatus sb_abs_diff_percent(double a, double b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSITY_BHM_H */
