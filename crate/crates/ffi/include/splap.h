#ifndef SPLAP_H
#define SPLAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum SplapStatus {
  SPLAP_STATUS_OK = 0,
  SPLAP_STATUS_NULL_POINTER = 1,
  SPLAP_STATUS_INVALID_INPUT = 2,
  SPLAP_STATUS_VALIDATION = 3,
  SPLAP_STATUS_PARSE = 4,
  SPLAP_STATUS_CONFIG = 5,
  SPLAP_STATUS_SINGULAR = 6,
  SPLAP_STATUS_CONVERGENCE = 7,
  SPLAP_STATUS_STEP_FAILED = 8,
  SPLAP_STATUS_CORRECTION = 9,
  SPLAP_STATUS_IO = 10,
  SPLAP_STATUS_PANIC = 11,
} SplapStatus;

// Noise coefficient choices for [`splap_run_trajectory`].
typedef enum SplapNoise {
  SPLAP_NOISE_ZERO = 0,
  // `|x|^{-1/2}` at simplex barycenters.
  SPLAP_NOISE_INV_SQRT_RADIUS = 1,
  SPLAP_NOISE_CONSTANT = 2,
} SplapNoise;

typedef struct SplapMesh SplapMesh;

typedef struct SplapOperators SplapOperators;

typedef struct SplapTrajectory SplapTrajectory;

// Additive-noise scheme on a uniform grid, driven by one scalar Brownian path.
typedef struct SplapSchemeParams {
  double p;
  double kappa;
  // Regularization floor for `p < 2`; nonpositive selects the default.
  double eps_reg;
  double horizon;
  // Number of time steps.
  size_t steps;
  // Steps of the sampled path; a multiple of `steps`.
  size_t path_steps;
  uint64_t seed;
  // One of the `SplapNoise` values.
  uint32_t noise;
  double noise_constant;
  // Nonpositive selects the default tolerance.
  double tol;
  // Nonzero for the componentwise gradient term.
  uint8_t componentwise;
  // Nonzero to zero the initial state on the boundary.
  uint8_t clip_initial;
} SplapSchemeParams;

typedef struct SplapPathError {
  double max_l2_sq;
  double quasi_sum;
  double total;
} SplapPathError;

typedef struct SplapRateFit {
  double log_c;
  double a;
  double stderr;
} SplapRateFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *splap_last_error_message(void);

// Static, nul-terminated version string.
const char *splap_version(void);

// Uniform mesh of the unit square with `n` cells per side.
//
// # Safety
// `out_mesh` must be valid for writes.
enum SplapStatus splap_mesh_unit_square(size_t n, struct SplapMesh **out_mesh);

// Mesh from its text form (`mesh v=<nv> s=<ns>` header, vertex and simplex lines).
//
// # Safety
// `text` must be a nul-terminated string; `out_mesh` valid for writes.
enum SplapStatus splap_mesh_from_text(const char *text, struct SplapMesh **out_mesh);

// # Safety
// `mesh` must come from this library and not be freed twice; null is ignored.
void splap_mesh_free(struct SplapMesh *mesh);

// # Safety
// Pointers must be valid.
enum SplapStatus splap_mesh_counts(const struct SplapMesh *mesh,
                                   size_t *vertices,
                                   size_t *simplices);

// Largest simplex diameter.
//
// # Safety
// Pointers must be valid.
enum SplapStatus splap_mesh_size(const struct SplapMesh *mesh, double *h);

// Largest ratio of simplex diameter to inradius.
//
// # Safety
// Pointers must be valid.
enum SplapStatus splap_mesh_nondegeneracy(const struct SplapMesh *mesh, double *ratio);

// Assembles the finite element operators and the interior Newton structure.
//
// # Safety
// Pointers must be valid.
enum SplapStatus splap_operators_new(const struct SplapMesh *mesh, struct SplapOperators **out_ops);

// # Safety
// `ops` must come from this library and not be freed twice; null is ignored.
void splap_operators_free(struct SplapOperators *ops);

// `‖u − v‖²` in L² for nodal vectors of length `n` (the vertex count).
//
// # Safety
// `u` and `v` must hold `n` doubles; `result` valid for writes.
enum SplapStatus splap_l2_error_sq(const struct SplapOperators *ops,
                                   const double *u,
                                   const double *v,
                                   size_t n,
                                   double *result);

// `‖F(∇u) − F(∇v)‖²` in L².
//
// # Safety
// `u` and `v` must hold `n` doubles; `result` valid for writes.
enum SplapStatus splap_quasinorm_error_sq(const struct SplapOperators *ops,
                                          const double *u,
                                          const double *v,
                                          size_t n,
                                          double p,
                                          double kappa,
                                          double *result);

// Runs the implicit scheme from the nodal vector `initial` (length `n`).
//
// # Safety
// Pointers must be valid; `initial` must hold `n` doubles.
enum SplapStatus splap_run_trajectory(const struct SplapOperators *ops,
                                      const struct SplapSchemeParams *params,
                                      const double *initial,
                                      size_t n,
                                      struct SplapTrajectory **out_traj);

// # Safety
// `traj` must come from this library and not be freed twice; null is ignored.
void splap_trajectory_free(struct SplapTrajectory *traj);

// Number of stored states (steps + 1) and their length.
//
// # Safety
// Pointers must be valid.
enum SplapStatus splap_trajectory_shape(const struct SplapTrajectory *traj,
                                        size_t *states,
                                        size_t *vertices);

// Copies state `m` into `buf` (capacity `len`) and its time into `time`.
//
// # Safety
// `buf` must hold `len` doubles; `time` may be null.
enum SplapStatus splap_trajectory_state(const struct SplapTrajectory *traj,
                                        size_t m,
                                        double *buf,
                                        size_t len,
                                        double *time);

// Error of `coarse` against the nested reference `fine`.
//
// # Safety
// Pointers must be valid.
enum SplapStatus splap_path_error(const struct SplapOperators *ops,
                                  const struct SplapTrajectory *coarse,
                                  const struct SplapTrajectory *fine,
                                  double p,
                                  double kappa,
                                  struct SplapPathError *result);

// Least squares fit of `log value = log_c + a log tau`.
//
// # Safety
// `taus` and `values` must hold `n` doubles.
enum SplapStatus splap_fit_rate(const double *taus,
                                const double *values,
                                size_t n,
                                struct SplapRateFit *result);

// `tauᵃ / (tauᵃ − tau_tildeᵃ)`.
//
// # Safety
// `result` must be valid for writes.
enum SplapStatus splap_bias(double tau, double tau_tilde, double a, double *result);

// Bias-corrected rate `a` and `alpha = a/2` from the refinement slope.
//
// # Safety
// `taus` must hold `n` doubles; outputs valid for writes.
enum SplapStatus splap_corrected_rate(double a_tilde,
                                      const double *taus,
                                      size_t n,
                                      double tau_tilde,
                                      double *a,
                                      double *alpha);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLAP_H */
