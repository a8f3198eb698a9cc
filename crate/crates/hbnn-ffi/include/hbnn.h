#ifndef HBNN_H
#define HBNN_H

/* Generated by cbindgen from the hbnn-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every FFI call.
 */
typedef enum HbnnStatus {
  HbnnOk = 0,
  /**
   * A required pointer argument was null.
   */
  HbnnNullArgument = 1,
  /**
   * An argument was out of range (sizes, indices, non-finite scalars).
   */
  HbnnInvalidArgument = 2,
  /**
   * A value violated a mathematical domain (point on or outside the ball).
   */
  HbnnDomainError = 3,
  HbnnDimensionMismatch = 4,
  /**
   * Malformed JSON or inconsistent architecture descriptor.
   */
  HbnnParseError = 5,
} HbnnStatus;

/**
 * Opaque Poincaré-ball context (radius parameter plus numeric guards).
 */
typedef struct HbnnBall HbnnBall;

/**
 * Opaque bit-packed ±1 tensor.
 */
typedef struct HbnnBitTensor HbnnBitTensor;

/**
 * Opaque basepoint cluster.
 */
typedef struct HbnnCluster HbnnCluster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static name of a status code.
 */
const char *hbnn_status_name(enum HbnnStatus status);

/**
 * Library version as a static string.
 */
const char *hbnn_version(void);

/**
 * Create a ball context with radius parameter `r` (> 0); the ball radius is
 * `1/sqrt(r)`.
 *
 * # Safety
 * `out` must be a valid pointer; the result must be released with
 * [`hbnn_ball_free`].
 */
enum HbnnStatus hbnn_ball_new(double radius_param, struct HbnnBall **out);

/**
 * # Safety
 * `ball` must be null or a pointer from [`hbnn_ball_new`], not yet freed.
 */
void hbnn_ball_free(struct HbnnBall *ball);

/**
 * Möbius addition `p ⊕ q`; `out` receives `len` doubles.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ball_mobius_add(const struct HbnnBall *ball,
                                     const double *p,
                                     const double *q,
                                     uintptr_t len,
                                     double *out);

/**
 * Möbius scalar multiplication `c ⊗ p`.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ball_mobius_scalar_mul(const struct HbnnBall *ball,
                                            double c,
                                            const double *p,
                                            uintptr_t len,
                                            double *out);

/**
 * Exponential map at `base` (origin-basepoint convention).
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ball_exp_map(const struct HbnnBall *ball,
                                  const double *base,
                                  const double *v,
                                  uintptr_t len,
                                  double *out);

/**
 * Logarithmic map: the tangent vector carrying `base` to `y`.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ball_log_map(const struct HbnnBall *ball,
                                  const double *base,
                                  const double *y,
                                  uintptr_t len,
                                  double *out);

/**
 * Geodesic distance between two interior points.
 *
 * # Safety
 * `p` and `q` must be valid for `len` doubles; `out` for one double.
 */
enum HbnnStatus hbnn_ball_distance(const struct HbnnBall *ball,
                                   const double *p,
                                   const double *q,
                                   uintptr_t len,
                                   double *out);

/**
 * Conformal factor `λ_x`.
 *
 * # Safety
 * `x` must be valid for `len` doubles; `out` for one double.
 */
enum HbnnStatus hbnn_ball_conformal_factor(const struct HbnnBall *ball,
                                           const double *x,
                                           uintptr_t len,
                                           double *out);

/**
 * Clip an arbitrary vector into the ball interior.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ball_project(const struct HbnnBall *ball,
                                  const double *x,
                                  uintptr_t len,
                                  double *out);

/**
 * Elementwise sign with `sign(0) = +1`, written as ±1.0 doubles.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_sign_binarize(const double *x, uintptr_t len, double *out);

/**
 * Surrogate gradient of the activation binarization.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ste_activation_grad(const double *a, uintptr_t len, double *out);

/**
 * Clip-rule mask `1{|w| ≤ 1/sqrt(r)}` as 0/1 doubles.
 *
 * # Safety
 * All pointers must be valid for `len` doubles.
 */
enum HbnnStatus hbnn_ste_weight_grad_mask(const struct HbnnBall *ball,
                                          const double *w,
                                          uintptr_t len,
                                          double *out);

/**
 * Pack a ±1 vector (entries ≥ 0 count as +1) into 64-bit words.
 *
 * # Safety
 * `signs` must be valid for `len` doubles; the result must be released with
 * [`hbnn_bits_free`].
 */
enum HbnnStatus hbnn_bits_pack(const double *signs, uintptr_t len, struct HbnnBitTensor **out);

/**
 * # Safety
 * `bits` must be null or a pointer from [`hbnn_bits_pack`], not yet freed.
 */
void hbnn_bits_free(struct HbnnBitTensor *bits);

/**
 * Number of logical (±1) elements in a packed tensor.
 *
 * # Safety
 * `bits` must be a valid packed tensor.
 */
uintptr_t hbnn_bits_len(const struct HbnnBitTensor *bits);

/**
 * Unpack to ±1.0 doubles; `out` must hold `hbnn_bits_len` doubles.
 *
 * # Safety
 * `bits` must be valid; `out` must hold the logical length.
 */
enum HbnnStatus hbnn_bits_unpack(const struct HbnnBitTensor *bits, double *out);

/**
 * XNOR/popcount dot product of two packed ±1 tensors of equal length.
 *
 * # Safety
 * `a` and `b` must be valid packed tensors; `out` must hold one i64.
 */
enum HbnnStatus hbnn_bits_xnor_dot(const struct HbnnBitTensor *a,
                                   const struct HbnnBitTensor *b,
                                   int64_t *out);

/**
 * Create a basepoint cluster: candidate 0 at the origin, the rest sampled
 * deterministically from `seed`.
 *
 * # Safety
 * `ball` must be valid; `out` receives an owned cluster released with
 * [`hbnn_cluster_free`].
 */
enum HbnnStatus hbnn_cluster_new(const struct HbnnBall *ball,
                                 uintptr_t t,
                                 uintptr_t dim,
                                 uint64_t seed,
                                 struct HbnnCluster **out);

/**
 * # Safety
 * `cluster` must be null or a pointer from [`hbnn_cluster_new`].
 */
void hbnn_cluster_free(struct HbnnCluster *cluster);

/**
 * Currently selected candidate index.
 *
 * # Safety
 * `cluster` must be valid.
 */
uintptr_t hbnn_cluster_selected(const struct HbnnCluster *cluster);

/**
 * Select a candidate by index.
 *
 * # Safety
 * `cluster` must be valid.
 */
enum HbnnStatus hbnn_cluster_set_selected(struct HbnnCluster *cluster, uintptr_t index);

/**
 * Map a latent vector through the selected candidate.
 *
 * # Safety
 * `w` and `out` must be valid for the cluster dimension.
 */
enum HbnnStatus hbnn_cluster_map_selected(const struct HbnnCluster *cluster,
                                          const double *w,
                                          uintptr_t len,
                                          double *out);

/**
 * Invert the selected candidate's map.
 *
 * # Safety
 * `y` and `out` must be valid for the cluster dimension.
 */
enum HbnnStatus hbnn_cluster_inverse(const struct HbnnCluster *cluster,
                                     const double *y,
                                     uintptr_t len,
                                     double *out);

/**
 * Pull a gradient at the mapped weight back into latent space
 * (`Jᵀ·cotangent` of the selected candidate's map).
 *
 * # Safety
 * `w`, `cotangent` and `out` must be valid for the cluster dimension.
 */
enum HbnnStatus hbnn_cluster_vjp(const struct HbnnCluster *cluster,
                                 const double *w,
                                 const double *cotangent,
                                 uintptr_t len,
                                 double *out);

/**
 * Parameter size (MB) and operation counts of an architecture descriptor
 * given as JSON, plus its full-precision baseline.
 *
 * # Safety
 * `json` must be a NUL-terminated string; out-pointers must each hold one
 * double.
 */
enum HbnnStatus hbnn_arch_cost_from_json(const char *json,
                                         double *size_mb,
                                         double *ops,
                                         double *fp_size_mb,
                                         double *fp_ops);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HBNN_H */
