#ifndef ROKDEEPC_H
#define ROKDEEPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum RkStatus {
  RK_STATUS_OK = 0,
  RK_STATUS_NULL_POINTER = 1,
  RK_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Configuration, parse or serialization error.
   */
  RK_STATUS_CONFIG = 3,
  RK_STATUS_IO = 4,
  /**
   * Factorization, infeasibility or solver failure.
   */
  RK_STATUS_SOLVER = 5,
  /**
   * An output buffer is too small; nothing was written.
   */
  RK_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  RK_STATUS_PANIC = 7,
} RkStatus;

typedef enum RkKernelKind {
  /**
   * `(x^T y + a)^b`, `b` rounded to an integer.
   */
  RK_KERNEL_KIND_POLYNOMIAL = 0,
  /**
   * `exp(-|x - y|^2 / a)`
   */
  RK_KERNEL_KIND_GAUSSIAN = 1,
  /**
   * `exp(x^T y / a)`
   */
  RK_KERNEL_KIND_EXPONENTIAL = 2,
  /**
   * Gaussian with `2 sigma^2 = a` on the past block plus the inner product of the inputs.
   */
  RK_KERNEL_KIND_HYBRID = 3,
} RkKernelKind;

typedef enum RkMethod {
  /**
   * Robust kernel DeePC with the selected configured kernel.
   */
  RK_METHOD_ROKDEEPC = 0,
  /**
   * Certainty-equivalence kernel MPC with the selected configured kernel.
   */
  RK_METHOD_KERNEL_MPC = 1,
  RK_METHOD_DEEPC = 2,
  RK_METHOD_KOOPMAN_MPC = 3,
} RkMethod;

typedef struct RkConfig RkConfig;

typedef struct RkController RkController;

typedef struct RkPredictor RkPredictor;

typedef struct RkTrajectory RkTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rk_version(void);

/**
 * Copy the calling thread's last error message into `buf` (truncated and
 * NUL-terminated). Returns the full message length without the NUL, or 0
 * when the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t rk_last_error(char *buf, size_t cap);

/**
 * The built-in polynomial SISO benchmark configuration.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum RkStatus rk_config_example1(struct RkConfig **out);

/**
 * Parse and validate a TOML configuration.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum RkStatus rk_config_from_toml(const char *text, struct RkConfig **out);

/**
 * Load and validate a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum RkStatus rk_config_load(const char *path, struct RkConfig **out);

/**
 * Hex SHA-256 fingerprint; `buf` needs 65 bytes.
 *
 * # Safety
 * `cfg` must be a live handle; `buf` must point to `cap` writable bytes.
 */
enum RkStatus rk_config_fingerprint(const struct RkConfig *cfg, char *buf, size_t cap);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void rk_config_free(struct RkConfig *cfg);

/**
 * Record `experiment.t_data` samples with the configured plant and
 * excitation; measurement noise of `noise_variance` is added to the
 * measured copy only.
 *
 * # Safety
 * `cfg` must be a live handle; `clean` and `measured` valid handle slots.
 */
enum RkStatus rk_collect(const struct RkConfig *cfg,
                         uint64_t seed,
                         double noise_variance,
                         struct RkTrajectory **clean,
                         struct RkTrajectory **measured);

/**
 * Build a trajectory from `len` samples of `m` inputs and `p` outputs.
 *
 * # Safety
 * `inputs` must hold `m * len` values, `outputs` `p * len`; `out` a valid handle slot.
 */
enum RkStatus rk_trajectory_new(size_t m,
                                size_t p,
                                size_t len,
                                const double *inputs,
                                const double *outputs,
                                struct RkTrajectory **out);

/**
 * # Safety
 * `traj` must be a live handle; the size pointers must be valid.
 */
enum RkStatus rk_trajectory_shape(const struct RkTrajectory *traj,
                                  size_t *m,
                                  size_t *p,
                                  size_t *len);

/**
 * Copy the samples out; either buffer may be null with capacity 0 to skip it.
 *
 * # Safety
 * `traj` must be a live handle; each buffer must hold its capacity.
 */
enum RkStatus rk_trajectory_read(const struct RkTrajectory *traj,
                                 double *inputs,
                                 size_t inputs_cap,
                                 double *outputs,
                                 size_t outputs_cap);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void rk_trajectory_free(struct RkTrajectory *traj);

/**
 * Least-squares linear predictor on the Hankel data of `traj`.
 *
 * # Safety
 * `traj` must be a live handle; `out` a valid handle slot.
 */
enum RkStatus rk_predictor_fit_linear(const struct RkTrajectory *traj,
                                      size_t t_ini,
                                      size_t horizon,
                                      struct RkPredictor **out);

/**
 * Kernel ridge predictor; see [`RkKernelKind`] for the meaning of `a` and `b`.
 *
 * # Safety
 * `traj` must be a live handle; `out` a valid handle slot.
 */
enum RkStatus rk_predictor_fit_kernel(const struct RkTrajectory *traj,
                                      size_t t_ini,
                                      size_t horizon,
                                      enum RkKernelKind kind,
                                      double a,
                                      double b,
                                      double gamma,
                                      struct RkPredictor **out);

/**
 * # Safety
 * `pred` must be a live handle; the size pointers must be valid.
 */
enum RkStatus rk_predictor_dims(const struct RkPredictor *pred,
                                size_t *m,
                                size_t *p,
                                size_t *t_ini,
                                size_t *horizon);

/**
 * Predict `p * horizon` outputs for the window `(u_ini, y_ini)` and future inputs `u`.
 *
 * # Safety
 * `pred` must be a live handle; every buffer must hold its stated length.
 */
enum RkStatus rk_predictor_predict(const struct RkPredictor *pred,
                                   const double *u_ini,
                                   size_t u_ini_len,
                                   const double *y_ini,
                                   size_t y_ini_len,
                                   const double *u,
                                   size_t u_len,
                                   double *y_out,
                                   size_t y_cap);

/**
 * # Safety
 * `pred` must be null or a handle not yet freed.
 */
void rk_predictor_free(struct RkPredictor *pred);

/**
 * A controller fitted on `data` with the settings of `cfg`. For the kernel
 * methods `kernel_index` selects among `predictors.kernels`; it is ignored otherwise.
 *
 * # Safety
 * `cfg` and `data` must be live handles; `out` a valid handle slot.
 */
enum RkStatus rk_controller_new(const struct RkConfig *cfg,
                                const struct RkTrajectory *data,
                                enum RkMethod method,
                                size_t kernel_index,
                                struct RkController **out);

/**
 * Solve one cycle; writes the `m * horizon` optimal inputs to `u_out` and
 * the solver iteration count to `iterations` (may be null).
 *
 * # Safety
 * `ctrl` must be a live handle; every buffer must hold its stated length.
 */
enum RkStatus rk_controller_solve(struct RkController *ctrl,
                                  const double *u_ini,
                                  size_t u_ini_len,
                                  const double *y_ini,
                                  size_t y_ini_len,
                                  const double *reference,
                                  size_t reference_len,
                                  double *u_out,
                                  size_t u_cap,
                                  size_t *iterations);

/**
 * # Safety
 * `ctrl` must be null or a handle not yet freed.
 */
void rk_controller_free(struct RkController *ctrl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROKDEEPC_H */
