#ifndef DIFFUSION_FFI_H
#define DIFFUSION_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible function.
 */
typedef enum DdStatus {
  DD_STATUS_OK = 0,
  DD_STATUS_NULL_POINTER = 1,
  DD_STATUS_USAGE = 2,
  DD_STATUS_DOMAIN = 3,
  DD_STATUS_SHAPE = 4,
  DD_STATUS_DATA = 5,
  DD_STATUS_NUMERIC = 6,
  DD_STATUS_IO = 7,
  DD_STATUS_PANIC = 8,
} DdStatus;

/**
 * Sampler choice for [`dd_sample`].
 */
typedef enum DdSampler {
  /**
   * `T`-step ancestral chain; `budget` is ignored.
   */
  DD_SAMPLER_ANCESTRAL = 0,
  /**
   * DPM-Solver with `budget` predictor calls.
   */
  DD_SAMPLER_DPM = 1,
  /**
   * Fixed-step RK4 with `budget` steps (`4·budget` calls).
   */
  DD_SAMPLER_RK4 = 2,
} DdSampler;

/**
 * Noise-predictor handle: a trained network or the Gaussian oracle.
 */
typedef struct DdPredictor DdPredictor;

/**
 * Variance schedule handle.
 */
typedef struct DdSchedule DdSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, excluding the NUL;
 * 0 means no error has been recorded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t dd_last_error_message(char *buf, size_t len);

/**
 * Linear β schedule with `steps` entries from `beta_start` to `beta_end`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DdStatus dd_schedule_linear(size_t steps,
                                 double beta_start,
                                 double beta_end,
                                 struct DdSchedule **out);

/**
 * # Safety
 * `schedule` must be null or a handle from this library not yet freed.
 */
void dd_schedule_free(struct DdSchedule *schedule);

/**
 * Number of diffusion steps `T`, or 0 for a null handle.
 *
 * # Safety
 * `schedule` must be null or a live handle.
 */
size_t dd_schedule_steps(const struct DdSchedule *schedule);

/**
 * Cumulative signal fraction `ᾱ_t` for `t ∈ 1..=T`.
 *
 * # Safety
 * `schedule` must be a live handle and `out` writable.
 */
enum DdStatus dd_schedule_alpha_bar(const struct DdSchedule *schedule, size_t t, double *out);

/**
 * Half-log-SNR `λ(t)` of the continuous extension, `t ∈ [0, 1]`.
 *
 * # Safety
 * `schedule` must be a live handle and `out` writable.
 */
enum DdStatus dd_schedule_lambda(const struct DdSchedule *schedule, double t, double *out);

/**
 * Loads a checkpoint; returns the network and the schedule it was trained with.
 *
 * # Safety
 * `path` must be a NUL-terminated string; the out pointers must be writable.
 */
enum DdStatus dd_predictor_load(const char *path,
                                struct DdPredictor **out_predictor,
                                struct DdSchedule **out_schedule);

/**
 * Exact noise predictor for data distributed as `N(mu0, s0²)` per pixel.
 *
 * # Safety
 * `out` must be writable.
 */
enum DdStatus dd_predictor_gaussian_oracle(double mu0, double s0, struct DdPredictor **out);

/**
 * # Safety
 * `predictor` must be null or a handle from this library not yet freed.
 */
void dd_predictor_free(struct DdPredictor *predictor);

/**
 * Draws one sample of shape `channels × height × width` into `out`.
 * `cond` may be null for unconditional sampling; otherwise it has the same
 * shape. `out_nfe` (optional) receives the number of predictor calls.
 *
 * # Safety
 * Handles must be live; `cond` (if non-null) and `out` must hold
 * `channels·height·width` doubles; `out_nfe` must be null or writable.
 */
enum DdStatus dd_sample(const struct DdPredictor *predictor,
                        const struct DdSchedule *schedule,
                        enum DdSampler sampler,
                        size_t budget,
                        const double *cond,
                        size_t channels,
                        size_t height,
                        size_t width,
                        uint64_t seed,
                        double *out,
                        size_t *out_nfe);

/**
 * PSNR in dB; identical images give `+inf`.
 *
 * # Safety
 * `reference` and `test` must hold `channels·height·width` doubles; `out` writable.
 */
enum DdStatus dd_psnr(const double *reference,
                      const double *test,
                      size_t channels,
                      size_t height,
                      size_t width,
                      double peak,
                      double *out);

/**
 * Mean SSIM (11×11 Gaussian window, σ = 1.5).
 *
 * # Safety
 * As for [`dd_psnr`].
 */
enum DdStatus dd_ssim(const double *reference,
                      const double *test,
                      size_t channels,
                      size_t height,
                      size_t width,
                      double peak,
                      double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dd_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFUSION_FFI_H */
