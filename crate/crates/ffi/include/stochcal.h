#ifndef STOCHCAL_H
#define STOCHCAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_ARGUMENT = 2,
  SC_STATUS_DIMENSION_MISMATCH = 3,
  SC_STATUS_NUMERICAL = 4,
  SC_STATUS_FIT_FAILED = 5,
  SC_STATUS_CONFIG = 6,
  SC_STATUS_IO = 7,
  SC_STATUS_PANIC = 8,
} ScStatus;

// Replicated simulation outputs.
typedef struct ScDataset ScDataset;

// Fitted heteroskedastic emulator.
typedef struct ScEmulator ScEmulator;

// Observed data, its covariance and the parameter prior.
typedef struct ScObservation ScObservation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null.
//
// The pointer stays valid until the next failing call on the same thread.
const char *sc_last_error(void);

// Library version as a static NUL-terminated string.
const char *sc_version(void);

// Create an empty dataset for `p` parameters and `d` outputs.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum ScStatus sc_dataset_new(size_t p, size_t d, struct ScDataset **out);

// Append `n_reps` replicate outputs (row-major, `n_reps x d`) at `theta`.
//
// # Safety
// `theta` must hold `p` values and `outputs` `n_reps * d` values.
enum ScStatus sc_dataset_push(struct ScDataset *ds,
                              const double *theta,
                              const double *outputs,
                              size_t n_reps);

// Number of unique parameters in the dataset.
//
// # Safety
// `ds` must be a live dataset handle or null.
size_t sc_dataset_len(const struct ScDataset *ds);

// # Safety
// `ds` must come from [`sc_dataset_new`] and not be used afterwards.
void sc_dataset_free(struct ScDataset *ds);

// Fit an emulator by maximum likelihood with `restarts` random restarts.
//
// # Safety
// `ds` must be a live dataset handle and `out` writable.
enum ScStatus sc_emulator_fit(const struct ScDataset *ds,
                              size_t restarts,
                              uint64_t seed,
                              struct ScEmulator **out);

// Predictive mean, emulator variance and intrinsic noise variance at `theta`.
//
// Each output buffer holds `d` values; `intrinsic` may be null.
//
// # Safety
// `theta` must hold `p` values and non-null outputs `d` values.
enum ScStatus sc_emulator_predict(const struct ScEmulator *em,
                                  const double *theta,
                                  double *mean,
                                  double *var,
                                  double *intrinsic);

// # Safety
// `em` must be a live emulator handle or null.
enum ScStatus sc_emulator_dims(const struct ScEmulator *em, size_t *p, size_t *d);

// # Safety
// `em` must come from [`sc_emulator_fit`] and not be used afterwards.
void sc_emulator_free(struct ScEmulator *em);

// Observation model with data `y` (length `d`), covariance `sigma`
// (`d x d`, row-major) and a uniform prior on `[0, 1]^p`.
//
// # Safety
// Buffers must hold the stated number of values and `out` be writable.
enum ScStatus sc_observation_new(const double *y,
                                 const double *sigma,
                                 size_t d,
                                 size_t p,
                                 struct ScObservation **out);

// # Safety
// `obs` must come from [`sc_observation_new`] and not be used afterwards.
void sc_observation_free(struct ScObservation *obs);

// Mean and variance of the unnormalized posterior at `theta` under the emulator.
//
// # Safety
// Handles must be live, `theta` must hold `p` values, outputs writable.
enum ScStatus sc_posterior_moments(const struct ScEmulator *em,
                                   const struct ScObservation *obs,
                                   const double *theta,
                                   double *mean,
                                   double *variance);

// Split `b` extra replicates across the design points to reduce the
// integrated posterior variance over `n_ref` reference points.
//
// `delta` receives one count per unique design point, in dataset order.
//
// # Safety
// `reference` must hold `n_ref * p` values and `delta` `n_delta` slots.
enum ScStatus sc_allocate_replicates(const struct ScEmulator *em,
                                     const struct ScObservation *obs,
                                     const double *reference,
                                     size_t n_ref,
                                     size_t b,
                                     size_t *delta,
                                     size_t n_delta);

// Run the experiment described by a TOML configuration, writing results
// to `outdir`. With `bench` nonzero every method and batch size listed in
// the configuration is run.
//
// # Safety
// Both strings must be valid NUL-terminated UTF-8.
enum ScStatus sc_run_config(const char *config_toml, const char *outdir, int32_t bench);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STOCHCAL_H */
