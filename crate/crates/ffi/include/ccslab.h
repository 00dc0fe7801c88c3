#ifndef CCSLAB_H
#define CCSLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum CcsStatus {
  CCS_STATUS_OK = 0,
  CCS_STATUS_NULL_POINTER = 1,
  CCS_STATUS_INVALID_INPUT = 2,
  CCS_STATUS_DOMAIN = 3,
  CCS_STATUS_NUMERICAL = 4,
  CCS_STATUS_INVERSION_DIVERGED = 5,
  CCS_STATUS_DEGENERATE = 6,
  CCS_STATUS_OUT_OF_RANGE = 7,
  CCS_STATUS_CAPABILITY = 8,
  CCS_STATUS_CONFIG = 9,
  CCS_STATUS_PROTOCOL = 10,
  CCS_STATUS_IO = 11,
  CCS_STATUS_PANIC = 12,
} CcsStatus;

/*
 Schedule plus model, used by the batch samplers.
 */
typedef struct CcsLab CcsLab;

/*
 Gaussian mixture handle.
 */
typedef struct CcsModel CcsModel;

/*
 Noise schedule handle.
 */
typedef struct CcsSchedule CcsSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *ccs_version(void);

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *ccs_last_error_message(void);

/*
 Linear-beta schedule with `base_steps` fine steps subsampled to `steps`.

 # Safety
 `out` must be valid for writes.
 */
enum CcsStatus ccs_schedule_linear(double beta_start,
                                   double beta_end,
                                   size_t base_steps,
                                   size_t steps,
                                   struct CcsSchedule **out);

/*
 The default 1000-step linear schedule subsampled to 50 steps.

 # Safety
 `out` must be valid for writes.
 */
enum CcsStatus ccs_schedule_default(struct CcsSchedule **out);

/*
 Schedule from an explicit `alpha_bar[0..=T]` ladder.

 # Safety
 `alpha_bar` must point to `len` readable values; `out` must be valid for writes.
 */
enum CcsStatus ccs_schedule_from_alpha_bar(const double *alpha_bar,
                                           size_t len,
                                           struct CcsSchedule **out);

/*
 Number of DDIM steps `T`; zero for a null handle.

 # Safety
 `schedule` must be null or a live handle.
 */
size_t ccs_schedule_steps(const struct CcsSchedule *schedule);

/*
 `alpha_bar` at integer step `t`.

 # Safety
 `schedule` must be a live handle; `out` must be valid for writes.
 */
enum CcsStatus ccs_schedule_alpha_bar(const struct CcsSchedule *schedule, size_t t, double *out);

/*
 # Safety
 `schedule` must be null or a handle not yet freed.
 */
void ccs_schedule_free(struct CcsSchedule *schedule);

/*
 Single standard normal component in `dim` dimensions.

 # Safety
 `out` must be valid for writes.
 */
enum CcsStatus ccs_model_standard_normal(size_t dim, struct CcsModel **out);

/*
 Two equal-weight isotropic components at `+offset` and `-offset` in every
 coordinate, labelled "A" and "B".

 # Safety
 `out` must be valid for writes.
 */
enum CcsStatus ccs_model_symmetric_pair(size_t dim,
                                        double offset,
                                        double std,
                                        struct CcsModel **out);

/*
 Mixture of `k` diagonal Gaussians in `dim` dimensions. `means` and
 `variances` are row-major `k x dim`.

 # Safety
 `weights` must hold `k` values, `means` and `variances` `k * dim` values;
 `out` must be valid for writes.
 */
enum CcsStatus ccs_model_diagonal(size_t k,
                                  size_t dim,
                                  const double *weights,
                                  const double *means,
                                  const double *variances,
                                  struct CcsModel **out);

/*
 Dimension of the model; zero for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t ccs_model_dim(const struct CcsModel *model);

/*
 Score of the noised model at level `alpha_bar`, written to `out`.

 # Safety
 `x` and `out` must each hold `dim` values.
 */
enum CcsStatus ccs_model_score(const struct CcsModel *model,
                               const double *x,
                               size_t dim,
                               double alpha_bar,
                               double *out);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void ccs_model_free(struct CcsModel *model);

/*
 Deterministic generation from `x_t` at the last step down to step 0.

 # Safety
 `x_t` and `out` must each hold `dim` values.
 */
enum CcsStatus ccs_ddim_sample(const struct CcsSchedule *schedule,
                               const struct CcsModel *model,
                               const double *x_t,
                               size_t dim,
                               double *out);

/*
 Inversion of `x0` up to step `t_stop` with `refine_iters` fixed-point
 sweeps per step.

 # Safety
 `x0` and `out` must each hold `dim` values.
 */
enum CcsStatus ccs_ddim_invert(const struct CcsSchedule *schedule,
                               const struct CcsModel *model,
                               const double *x0,
                               size_t dim,
                               size_t t_stop,
                               size_t refine_iters,
                               double *out);

/*
 Spherical interpolation from `anchor` toward `noise` by arc `c0`.

 # Safety
 `anchor`, `noise` and `out` must each hold `dim` values.
 */
enum CcsStatus ccs_slerp(const double *anchor,
                         const double *noise,
                         size_t dim,
                         double c0,
                         double *out);

/*
 Arc length whose slerp moves a vector of squared norm `anchor_norm_sq`
 by distance `m`; `delta` is the reachability margin.

 # Safety
 `out` must be valid for writes.
 */
enum CcsStatus ccs_c0_for_distance(double anchor_norm_sq, double m, double delta, double *out);

/*
 Lab over copies of `schedule` and `model`; the inputs stay owned by the caller.

 # Safety
 `schedule` and `model` must be live handles; `out` must be valid for writes.
 */
enum CcsStatus ccs_lab_new(const struct CcsSchedule *schedule,
                           const struct CcsModel *model,
                           size_t refine_iters,
                           struct CcsLab **out);

/*
 # Safety
 `lab` must be null or a handle not yet freed.
 */
void ccs_lab_free(struct CcsLab *lab);

/*
 `n` full-inversion samples around `target` at scale `c0`, unguided.
 Samples are written row-major to `samples` (`n * dim` values); the
 per-draw residual norms go to `residuals` when it is not NULL.

 # Safety
 `target` must hold `dim` values, `samples` `n * dim` values and
 `residuals`, if not NULL, `n` values.
 */
enum CcsStatus ccs_lab_ccs_full_sample(const struct CcsLab *lab,
                                       const double *target,
                                       size_t dim,
                                       double c0,
                                       size_t n,
                                       uint64_t seed,
                                       double *samples,
                                       double *residuals);

/*
 Copies the message of the last failure into `buf` (NUL-terminated,
 truncated to `len - 1` bytes) and returns the full message length, or
 zero when there is none.

 # Safety
 `buf` must be null or writable for `len` bytes.
 */
size_t ccs_last_error_copy(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCSLAB_H */
