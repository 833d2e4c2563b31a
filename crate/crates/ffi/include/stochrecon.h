#ifndef STOCHRECON_H
#define STOCHRECON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_INVALID_ARGUMENT = 1,
  SR_STATUS_RESOURCE = 2,
  SR_STATUS_RESOLUTION = 3,
  SR_STATUS_UNSUPPORTED = 4,
  SR_STATUS_DIVERGED = 5,
  SR_STATUS_HYPOTHESIS = 6,
  SR_STATUS_CONFIG = 7,
  SR_STATUS_IO = 8,
  SR_STATUS_NULL_POINTER = 9,
  SR_STATUS_PANIC = 10,
} SrStatus;

/**
 * Grid field (corner values or cell masses) with one value per sample.
 */
typedef struct SrField SrField;

/**
 * Monte Carlo white-noise draw.
 */
typedef struct SrNoise SrNoise;

/**
 * Checks and artifacts of a configured experiment.
 */
typedef struct SrOutcome SrOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sr_version(void);

/**
 * Copies the message of the last failed call on this thread into `buf`
 * (truncated, always NUL-terminated when `len > 0`). Returns the full
 * message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null with `len == 0`.
 */
size_t sr_last_error(char *buf, size_t len);

/**
 * Draws `m` samples of white noise on `[0,t]^d` with `n` cells per axis.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SrStatus sr_noise_sample(size_t n,
                              double t,
                              size_t d,
                              size_t m,
                              uint64_t seed,
                              struct SrNoise **out);

/**
 * # Safety
 * `noise` must come from [`sr_noise_sample`] and not be used afterwards.
 */
void sr_noise_free(struct SrNoise *noise);

/**
 * Brownian sheet of a noise draw.
 *
 * # Safety
 * Handles must be valid.
 */
enum SrStatus sr_brownian_sheet(const struct SrNoise *noise, struct SrField **out);

/**
 * Primitive of the reconstructed Walsh product `B·ξ`, a corner field.
 *
 * # Safety
 * Handles must be valid.
 */
enum SrStatus sr_walsh_primitive(const struct SrNoise *noise, struct SrField **out);

/**
 * `I^{[d]}Ξ_{s,t}` for `Ξ_{s,t} = B_s □_{s,t}B`, at grid resolution.
 * `s` and `t` are corner indices of length `d`; `values` receives one
 * entry per sample and must hold `len ≥ samples`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum SrStatus sr_sew_frozen_increment(const struct SrNoise *noise,
                                      const size_t *s,
                                      const size_t *t,
                                      size_t d,
                                      double *values,
                                      size_t len);

/**
 * Solves the default mixed SPDE regime on an `n × n` grid with `m` samples.
 * `contraction` (nullable) receives the estimated Picard contraction ratio.
 *
 * # Safety
 * Pointers must be valid or null where allowed.
 */
enum SrStatus sr_spde_solve_default(size_t n,
                                    size_t m,
                                    uint64_t seed,
                                    struct SrField **out,
                                    double *contraction);

/**
 * Grid shape of a field. Any output pointer may be null.
 *
 * # Safety
 * `field` must be valid.
 */
enum SrStatus sr_field_shape(const struct SrField *field, size_t *n, size_t *d, size_t *samples);

/**
 * Copies the per-sample values at corner `idx` (length `d`) of a corner field.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum SrStatus sr_field_corner(const struct SrField *field,
                              const size_t *idx,
                              size_t d,
                              double *values,
                              size_t len);

/**
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void sr_field_free(struct SrField *field);

/**
 * Parses a TOML experiment config and runs it.
 *
 * # Safety
 * `config` must be a NUL-terminated UTF-8 string.
 */
enum SrStatus sr_run_config(const char *config, struct SrOutcome **out);

/**
 * 1 when every check passed, 0 otherwise (also for a null handle).
 *
 * # Safety
 * `outcome` must be valid or null.
 */
int32_t sr_outcome_passed(const struct SrOutcome *outcome);

/**
 * Number of checks in an outcome.
 *
 * # Safety
 * `outcome` must be valid or null.
 */
size_t sr_outcome_check_count(const struct SrOutcome *outcome);

/**
 * Value and pass flag of check `i`.
 *
 * # Safety
 * `outcome` must be valid; `value` and `passed` may be null.
 */
enum SrStatus sr_outcome_check(const struct SrOutcome *outcome,
                               size_t i,
                               double *value,
                               int32_t *passed);

/**
 * # Safety
 * `outcome` must come from [`sr_run_config`] and not be used afterwards.
 */
void sr_outcome_free(struct SrOutcome *outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STOCHRECON_H */
