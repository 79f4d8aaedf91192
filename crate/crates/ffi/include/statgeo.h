#ifndef STATGEO_H
#define STATGEO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum StatgeoStatus {
  STATGEO_STATUS_OK = 0,
  STATGEO_STATUS_NULL_POINTER = 1,
  STATGEO_STATUS_INVALID_ARGUMENT = 2,
  STATGEO_STATUS_IO = 3,
  STATGEO_STATUS_PARSE = 4,
  STATGEO_STATUS_NUMERICAL = 5,
  STATGEO_STATUS_PANIC = 6,
} StatgeoStatus;

// A decoder network and its likelihood family.
typedef struct StatgeoDecoder StatgeoDecoder;

// A metric interpolated from tensors on a lattice.
typedef struct StatgeoGrid StatgeoGrid;

// A fitted LAND model.
typedef struct StatgeoLand StatgeoLand;

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *statgeo_last_error(void);

// Library version as a static NUL-terminated string.
const char *statgeo_version(void);

// Loads a decoder JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum StatgeoStatus statgeo_decoder_load(const char *path, struct StatgeoDecoder **out);

// # Safety
// `dec` must come from `statgeo_decoder_load` and not be used afterwards.
void statgeo_decoder_free(struct StatgeoDecoder *dec);

// Latent dimension, or 0 for a null handle.
//
// # Safety
// `dec` must be null or a live decoder handle.
size_t statgeo_decoder_latent_dim(const struct StatgeoDecoder *dec);

// Length of the flattened parameter vector, or 0 for a null handle.
//
// # Safety
// `dec` must be null or a live decoder handle.
size_t statgeo_decoder_output_dim(const struct StatgeoDecoder *dec);

// Decoded, guarded distribution parameters of every feature.
//
// # Safety
// `z` holds `d` doubles and `out` has room for `out_len` doubles.
enum StatgeoStatus statgeo_decoder_forward(const struct StatgeoDecoder *dec,
                                           const double *z,
                                           size_t d,
                                           double *out,
                                           size_t out_len);

// Pullback Fisher-Rao metric at `z`, written row-major into `d × d` doubles.
//
// # Safety
// `z` holds `d` doubles and `out` has room for `d * d` doubles.
enum StatgeoStatus statgeo_pullback_metric(const struct StatgeoDecoder *dec,
                                           const double *z,
                                           size_t d,
                                           double *out);

// Closed-form KL between the decoded distributions at `z1` and `z2`.
//
// # Safety
// `z1` and `z2` hold `d` doubles each; `out` is writable.
enum StatgeoStatus statgeo_kl(const struct StatgeoDecoder *dec,
                              const double *z1,
                              const double *z2,
                              size_t d,
                              double *out);

// Minimizes the closed-form KL energy between `z0` and `z1` with default
// settings and reports the energy and length of the optimized curve.
//
// # Safety
// `z0` and `z1` hold `d` doubles each; `energy` and `length` are writable.
enum StatgeoStatus statgeo_geodesic(const struct StatgeoDecoder *dec,
                                    const double *z0,
                                    const double *z1,
                                    size_t d,
                                    uint64_t seed,
                                    double *energy,
                                    double *length);

// Exponential map under the exact pullback metric, RK4 with `steps` steps.
//
// # Safety
// `z` and `v` hold `d` doubles each and `out` has room for `d` doubles.
enum StatgeoStatus statgeo_exp_map(const struct StatgeoDecoder *dec,
                                   const double *z,
                                   const double *v,
                                   size_t d,
                                   size_t steps,
                                   double *out);

// Logarithmic map: initial velocity of the optimized closed-form KL
// geodesic from `z` to `y`, scaled to the geodesic length.
//
// # Safety
// `z` and `y` hold `d` doubles each and `out` has room for `d` doubles.
enum StatgeoStatus statgeo_log_map(const struct StatgeoDecoder *dec,
                                   const double *z,
                                   const double *y,
                                   size_t d,
                                   uint64_t seed,
                                   double *out);

// Loads a metric grid JSON file written by `statgeo metric-grid`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum StatgeoStatus statgeo_grid_load(const char *path, struct StatgeoGrid **out);

// # Safety
// `grid` must come from `statgeo_grid_load` and not be used afterwards.
void statgeo_grid_free(struct StatgeoGrid *grid);

// Interpolated metric at `z`, written row-major into `d × d` doubles.
//
// # Safety
// `z` holds `d` doubles and `out` has room for `d * d` doubles.
enum StatgeoStatus statgeo_grid_metric(const struct StatgeoGrid *grid,
                                       const double *z,
                                       size_t d,
                                       double *out);

// Loads a LAND model JSON file written by `statgeo land`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum StatgeoStatus statgeo_land_load(const char *path, struct StatgeoLand **out);

// # Safety
// `land` must come from `statgeo_land_load` and not be used afterwards.
void statgeo_land_free(struct StatgeoLand *land);

// Log-density of the LAND at `z` with respect to the Riemannian volume of
// `grid`.
//
// # Safety
// `z` holds `d` doubles and `out` is writable.
enum StatgeoStatus statgeo_land_logpdf(const struct StatgeoLand *land,
                                       const struct StatgeoGrid *grid,
                                       const double *z,
                                       size_t d,
                                       double *out);

#endif  /* STATGEO_H */
