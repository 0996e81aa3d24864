#ifndef UNCREG_H
#define UNCREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum UncregStatus {
  UNCREG_STATUS_OK = 0,
  UNCREG_STATUS_NULL_POINTER = 1,
  UNCREG_STATUS_INVALID_ARGUMENT = 2,
  UNCREG_STATUS_IO = 3,
  UNCREG_STATUS_FORMAT = 4,
  UNCREG_STATUS_NUMERICAL = 5,
  UNCREG_STATUS_BUFFER_TOO_SMALL = 6,
  UNCREG_STATUS_PANIC = 7,
} UncregStatus;

// Smoothed nonparametric posterior.
typedef struct UncregDemons UncregDemons;

// Per-voxel predicted coordinates with their standard deviations.
typedef struct UncregField UncregField;

// Fitted transformation posterior together with its design matrix.
typedef struct UncregPosterior UncregPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Valid until the next
// failing call on the same thread; never null.
const char *uncreg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *uncreg_version(void);

// Reads a mean/std field (`.uaf` with mask companion, or `.nii`).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum UncregStatus uncreg_field_read(const char *path, struct UncregField **out);

// Number of foreground voxels.
//
// # Safety
// `field` must be a live handle or null.
size_t uncreg_field_masked_voxels(const struct UncregField *field);

// # Safety
// `field` must come from this library and not be used afterwards.
void uncreg_field_free(struct UncregField *field);

// Affine fit. Pass NaN as `epsilon` for the default ridge.
//
// # Safety
// `field` must be a live handle and `out` a valid pointer.
enum UncregStatus uncreg_fit_affine(const struct UncregField *field,
                                    bool weighted,
                                    double epsilon,
                                    struct UncregPosterior **out);

// Cubic B-spline fit with control-point spacing in mm.
//
// # Safety
// `field` must be a live handle and `out` a valid pointer.
enum UncregStatus uncreg_fit_bspline(const struct UncregField *field,
                                     double spacing_mm,
                                     bool weighted,
                                     double epsilon,
                                     struct UncregPosterior **out);

// Reads a posterior file; the design matrix is rebuilt on `field`'s mask.
//
// # Safety
// `path` must be a NUL-terminated string, `field` a live handle and `out`
// a valid pointer.
enum UncregStatus uncreg_posterior_read(const char *path,
                                        const struct UncregField *field,
                                        struct UncregPosterior **out);

// # Safety
// `posterior` must be a live handle and `path` a NUL-terminated string.
enum UncregStatus uncreg_posterior_write(const struct UncregPosterior *posterior, const char *path);

// Number of coefficients B per direction.
//
// # Safety
// `posterior` must be a live handle or null.
size_t uncreg_posterior_num_coefficients(const struct UncregPosterior *posterior);

// Copies the coefficient means of one direction (0, 1 or 2) into `buf`.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum UncregStatus uncreg_posterior_coef_mean(const struct UncregPosterior *posterior,
                                             uint32_t direction,
                                             double *buf,
                                             size_t len);

// Copies the coefficient variances of one direction into `buf`. Columns
// without support in the mask report +infinity.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum UncregStatus uncreg_posterior_coef_variance(const struct UncregPosterior *posterior,
                                                 uint32_t direction,
                                                 double *buf,
                                                 size_t len);

// Draws `count` transformation samples and writes them as one
// 3·count-channel volume.
//
// # Safety
// Handles must be live and `path` a NUL-terminated string.
enum UncregStatus uncreg_sample_to_file(const struct UncregPosterior *posterior,
                                        const struct UncregField *field,
                                        size_t count,
                                        uint64_t seed,
                                        const char *path);

// # Safety
// `posterior` must come from this library and not be used afterwards.
void uncreg_posterior_free(struct UncregPosterior *posterior);

// Gaussian smoothing of the field with variance propagation. `precision`
// selects σ⁻²-weighted normalized convolution.
//
// # Safety
// `field` must be a live handle and `out` a valid pointer.
enum UncregStatus uncreg_demons_fit(const struct UncregField *field,
                                    double kernel_sigma_mm,
                                    bool precision,
                                    struct UncregDemons **out);

// Writes the smoothed posterior under `prefix` (mean, variance, mask and
// metadata files).
//
// # Safety
// `demons` must be a live handle and `prefix` a NUL-terminated string.
enum UncregStatus uncreg_demons_write(const struct UncregDemons *demons, const char *prefix);

// # Safety
// `demons` must come from this library and not be used afterwards.
void uncreg_demons_free(struct UncregDemons *demons);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNCREG_H */
