#ifndef NAIL_LAB_H
#define NAIL_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NailStatus {
  NAIL_STATUS_OK = 0,
  NAIL_STATUS_NULL_POINTER = 1,
  NAIL_STATUS_INVALID_ARGUMENT = 2,
  NAIL_STATUS_NUMERICAL = 3,
  NAIL_STATUS_PANIC = 4,
} NailStatus;

typedef enum NailWeighting {
  NAIL_WEIGHTING_PER_STEP = 0,
  NAIL_WEIGHTING_TRAJECTORY = 1,
} NailWeighting;

/**
 * Opaque tabular MDP.
 */
typedef struct NailMdp NailMdp;

/**
 * Opaque stochastic policy.
 */
typedef struct NailPolicy NailPolicy;

/**
 * Opaque NAIL run trace.
 */
typedef struct NailTraceHandle NailTraceHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *nail_last_error(void);

/**
 * Builds an MDP from a row-major `S × A × S` transition array and a length-`S`
 * initial distribution.
 *
 * # Safety
 * `transition` must point to `S·A·S` doubles, `initial` to `S` doubles.
 */
enum NailStatus nail_mdp_new(const double *transition,
                             const double *initial,
                             size_t num_states,
                             size_t num_actions,
                             double gamma,
                             struct NailMdp **out);

/**
 * The 5×5 slippery gridworld.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NailStatus nail_mdp_gridworld5(struct NailMdp **out);

/**
 * # Safety
 * `mdp` must come from this library and not be used afterwards. Null is ignored.
 */
void nail_mdp_free(struct NailMdp *mdp);

/**
 * # Safety
 * All pointers must be valid.
 */
enum NailStatus nail_mdp_dims(const struct NailMdp *mdp, size_t *num_states, size_t *num_actions);

/**
 * Policy from a row-major `S × A` table of probabilities.
 *
 * # Safety
 * `probs` must point to `S·A` doubles.
 */
enum NailStatus nail_policy_new(const double *probs,
                                size_t num_states,
                                size_t num_actions,
                                struct NailPolicy **out);

/**
 * Maximum-entropy optimal policy of `mdp` for a row-major `S × A` reward.
 *
 * # Safety
 * `reward` must point to `S·A` doubles.
 */
enum NailStatus nail_expert_policy(const struct NailMdp *mdp,
                                   const double *reward,
                                   struct NailPolicy **out);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards. Null is ignored.
 */
void nail_policy_free(struct NailPolicy *policy);

/**
 * Copies the row-major probabilities into `out`, which must hold exactly `len = S·A` values.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum NailStatus nail_policy_probs(const struct NailPolicy *policy, double *out, size_t len);

/**
 * Discounted occupancy of `policy`, row-major `S × A`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum NailStatus nail_occupancy(const struct NailMdp *mdp,
                               const struct NailPolicy *policy,
                               double *out,
                               size_t len);

/**
 * `KL(p^policy ‖ p^expert)` between occupancies.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NailStatus nail_reverse_kl(const struct NailMdp *mdp,
                                const struct NailPolicy *policy,
                                const struct NailPolicy *expert,
                                double *out);

/**
 * Runs exact NAIL from the uniform policy towards the occupancy of `expert`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NailStatus nail_run(const struct NailMdp *mdp,
                         const struct NailPolicy *expert,
                         size_t iterations,
                         enum NailWeighting weighting,
                         struct NailTraceHandle **out);

/**
 * Number of records (iterations plus the initial policy); 0 for null.
 *
 * # Safety
 * `trace` must be null or valid.
 */
size_t nail_trace_len(const struct NailTraceHandle *trace);

/**
 * Copies the reverse-KL series into `out`, which must hold `nail_trace_len` values.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum NailStatus nail_trace_reverse_kl(const struct NailTraceHandle *trace, double *out, size_t len);

/**
 * New policy handle holding the trace's final policy.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NailStatus nail_trace_final_policy(const struct NailTraceHandle *trace,
                                        struct NailPolicy **out);

/**
 * # Safety
 * `trace` must come from this library and not be used afterwards. Null is ignored.
 */
void nail_trace_free(struct NailTraceHandle *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAIL_LAB_H */
