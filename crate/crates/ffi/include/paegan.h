#ifndef PAEGAN_H
#define PAEGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PaeganStatus {
  PAEGAN_STATUS_OK = 0,
  PAEGAN_STATUS_NULL_POINTER = 1,
  PAEGAN_STATUS_INVALID_ARGUMENT = 2,
  PAEGAN_STATUS_CONFIG = 3,
  PAEGAN_STATUS_IO = 4,
  PAEGAN_STATUS_FORMAT = 5,
  PAEGAN_STATUS_LENGTH = 6,
  PAEGAN_STATUS_MISSING_STAGE = 7,
  PAEGAN_STATUS_INTERNAL = 8,
  PAEGAN_STATUS_PANIC = 9,
} PaeganStatus;

typedef struct PaeganBelief PaeganBelief;

typedef struct PaeganDataset PaeganDataset;

typedef struct PaeganFilter PaeganFilter;

typedef struct PaeganPae PaeganPae;

typedef struct PaeganSampler PaeganSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread (empty after success).
 Valid until the next call on the same thread.
 */
const char *paegan_last_error(void);

/*
 Static name of a status code.
 */
const char *paegan_status_name(enum PaeganStatus status);

/*
 Simulates an episode set. `world_json` may be null for the defaults.
 */
enum PaeganStatus paegan_dataset_generate(const char *world_json,
                                          size_t episodes,
                                          size_t steps,
                                          uint64_t seed,
                                          struct PaeganDataset **out);

enum PaeganStatus paegan_dataset_load(const char *path, struct PaeganDataset **out);

enum PaeganStatus paegan_dataset_save(const struct PaeganDataset *ds, const char *path);

void paegan_dataset_free(struct PaeganDataset *ds);

/*
 Writes episode count, steps per episode and image side.
 */
enum PaeganStatus paegan_dataset_shape(const struct PaeganDataset *ds,
                                       size_t *episodes,
                                       size_t *steps,
                                       size_t *side);

/*
 Copies frame `t` of `episode` into `buf` (`side * side` floats).
 */
enum PaeganStatus paegan_dataset_frame(const struct PaeganDataset *ds,
                                       size_t episode,
                                       size_t t,
                                       float *buf,
                                       size_t len);

/*
 Writes ball `ball`'s true position at step `t` as `xy[0..2]`.
 */
enum PaeganStatus paegan_dataset_position(const struct PaeganDataset *ds,
                                          size_t episode,
                                          size_t t,
                                          size_t ball,
                                          double *xy);

/*
 Loads a trained PAE checkpoint.
 */
enum PaeganStatus paegan_pae_load(const char *path, struct PaeganPae **out);

/*
 Fresh untrained PAE with the default architecture.
 */
enum PaeganStatus paegan_pae_new(uint64_t seed, struct PaeganPae **out);

void paegan_pae_free(struct PaeganPae *pae);

/*
 Pixels per observation of this model.
 */
size_t paegan_pae_pixels(const struct PaeganPae *pae);

/*
 Zero belief state for `pae`.
 */
enum PaeganStatus paegan_belief_new(const struct PaeganPae *pae, struct PaeganBelief **out);

void paegan_belief_free(struct PaeganBelief *b);

/*
 Advances the belief by one step. `frame` null means no observation.
 */
enum PaeganStatus paegan_belief_propagate(const struct PaeganPae *pae,
                                          struct PaeganBelief *belief,
                                          const float *frame,
                                          size_t len);

/*
 Expected observation of the belief into `buf`.
 */
enum PaeganStatus paegan_belief_decode(const struct PaeganPae *pae,
                                       const struct PaeganBelief *belief,
                                       float *buf,
                                       size_t len);

enum PaeganStatus paegan_sampler_load(const char *path, struct PaeganSampler **out);

void paegan_sampler_free(struct PaeganSampler *s);

/*
 Draws one state sample from the belief (noise seeded by `seed`) and
 writes its decoded observation into `buf`.
 */
enum PaeganStatus paegan_sample_observation(const struct PaeganPae *pae,
                                            const struct PaeganSampler *sampler,
                                            const struct PaeganBelief *belief,
                                            uint64_t seed,
                                            float *buf,
                                            size_t len);

/*
 Particle filter over the world described by `world_json` (null for the
 defaults), initialized from the prior.
 */
enum PaeganStatus paegan_filter_new(const char *world_json,
                                    size_t num_particles,
                                    uint64_t seed,
                                    struct PaeganFilter **out);

/*
 Particle filter initialized from the posterior after a first position
 measurement `xy` (`2 * num_balls` values). Do not pass the same
 measurement to `paegan_filter_update` again.
 */
enum PaeganStatus paegan_filter_new_from_measurement(const char *world_json,
                                                     size_t num_particles,
                                                     uint64_t seed,
                                                     const double *xy,
                                                     size_t len,
                                                     struct PaeganFilter **out);

void paegan_filter_free(struct PaeganFilter *f);

/*
 Propagates every particle one step.
 */
enum PaeganStatus paegan_filter_predict(struct PaeganFilter *f);

/*
 Weights by a position measurement `xy` (`2 * num_balls` values).
 `diverged` (optional) is set to 1 when every weight collapsed.
 */
enum PaeganStatus paegan_filter_update(struct PaeganFilter *f,
                                       const double *xy,
                                       size_t len,
                                       int32_t *diverged);

/*
 Weighted mean of the particles' rendered observations into `buf`.
 */
enum PaeganStatus paegan_filter_expected_observation(const struct PaeganFilter *f,
                                                     float *buf,
                                                     size_t len);

/*
 Weighted mean position of each ball into `xy` (`2 * num_balls` values).
 */
enum PaeganStatus paegan_filter_mean_positions(const struct PaeganFilter *f,
                                               double *xy,
                                               size_t len);

/*
 Effective sample size of the current weights.
 */
double paegan_filter_ess(const struct PaeganFilter *f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAEGAN_H */
