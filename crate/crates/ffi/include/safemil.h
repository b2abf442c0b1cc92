#ifndef SAFEMIL_H
#define SAFEMIL_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bundled environment presets.
 */
typedef enum {
  SAFEMIL_ENV_KIND_SPEED_CHAIN = 0,
  SAFEMIL_ENV_KIND_HAZARD_GRID = 1,
} SafemilEnvKind;

/**
 * Result code of every fallible call.
 */
typedef enum {
  SAFEMIL_STATUS_OK = 0,
  SAFEMIL_STATUS_NULL_POINTER = 1,
  SAFEMIL_STATUS_INVALID_UTF8 = 2,
  SAFEMIL_STATUS_CONFIG = 3,
  SAFEMIL_STATUS_CONTRACT = 4,
  SAFEMIL_STATUS_INFEASIBLE = 5,
  SAFEMIL_STATUS_SOLVER = 6,
  SAFEMIL_STATUS_GENERATION = 7,
  SAFEMIL_STATUS_TRAINING = 8,
  SAFEMIL_STATUS_PARSE = 9,
  SAFEMIL_STATUS_IO = 10,
  SAFEMIL_STATUS_BUFFER_TOO_SMALL = 11,
  SAFEMIL_STATUS_PANIC = 12,
} SafemilStatus;

/**
 * Opaque constrained MDP.
 */
typedef struct SafemilEnv SafemilEnv;

/**
 * Opaque policy: an action-probability table or a softmax network.
 */
typedef struct SafemilPolicy SafemilPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next safemil call on the same thread.
 */
const char *safemil_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *safemil_version(void);

/**
 * Build an environment from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
SafemilStatus safemil_env_from_json(const char *json, SafemilEnv **out_env);

/**
 * Build one of the bundled default environments.
 *
 * # Safety
 * `out_env` must be a valid pointer.
 */
SafemilStatus safemil_env_default(SafemilEnvKind kind, SafemilEnv **out_env);

/**
 * # Safety
 * `env` must come from this library and not be freed twice; NULL is ignored.
 */
void safemil_env_free(SafemilEnv *env);

/**
 * Number of states, actions, and the horizon.
 *
 * # Safety
 * All pointers must be valid.
 */
SafemilStatus safemil_env_shape(const SafemilEnv *env,
                                size_t *num_states,
                                size_t *num_actions,
                                size_t *horizon);

/**
 * Exact constrained-optimal policy (occupancy LP).
 *
 * # Safety
 * `env` must be a live handle and `out_policy` a valid pointer.
 */
SafemilStatus safemil_solve_constrained(const SafemilEnv *env, SafemilPolicy **out_policy);

/**
 * Uniform-random policy over the environment's actions.
 *
 * # Safety
 * `env` must be a live handle and `out_policy` a valid pointer.
 */
SafemilStatus safemil_policy_uniform(const SafemilEnv *env, SafemilPolicy **out_policy);

/**
 * Load a softmax policy network from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_policy` a valid pointer.
 */
SafemilStatus safemil_policy_load_checkpoint(const char *path, SafemilPolicy **out_policy);

/**
 * # Safety
 * `policy` must come from this library and not be freed twice; NULL is ignored.
 */
void safemil_policy_free(SafemilPolicy *policy);

/**
 * Copy `π(·|s)` at timestep `t` into `probs`, which holds `len` doubles.
 *
 * # Safety
 * Handles must be live and `probs` must point to `len` writable doubles.
 */
SafemilStatus safemil_policy_probs(const SafemilPolicy *policy,
                                   const SafemilEnv *env,
                                   size_t t,
                                   size_t state,
                                   double *probs,
                                   size_t len);

/**
 * Exact expected return and cost, discounted by `gamma` (1 gives plain sums).
 *
 * # Safety
 * Handles must be live and the out-pointers valid.
 */
SafemilStatus safemil_policy_eval(const SafemilEnv *env,
                                  const SafemilPolicy *policy,
                                  double gamma,
                                  double *out_return,
                                  double *out_cost);

/**
 * `1 - (1 - alpha)^k`.
 *
 * # Safety
 * `out_p` must be a valid pointer.
 */
SafemilStatus safemil_lemma1_probability(double alpha, size_t k, double *out_p);

/**
 * Bradley-Terry loss `softplus(score_u - score_n)`.
 */
double safemil_bt_loss(double score_n, double score_u);

/**
 * Mean of the worst `ceil(n·k/100)` costs minus `reference_cost`.
 *
 * # Safety
 * `costs` must point to `n` readable doubles and `out_value` be valid.
 */
SafemilStatus safemil_cvar_cost(const double *costs,
                                size_t n,
                                double k_percent,
                                double reference_cost,
                                double *out_value);

/**
 * Normalized return and cost against a reference and a random baseline.
 *
 * # Safety
 * Out-pointers must be valid.
 */
SafemilStatus safemil_normalize(double ret,
                                double cost,
                                double reference_return,
                                double reference_cost,
                                double random_return,
                                double *out_return,
                                double *out_cost);

/**
 * Run the full experiment described by a TOML config and return the summary
 * CSV, to be released with [`safemil_string_free`].
 *
 * # Safety
 * `config_toml` must be NUL-terminated and `out_csv` valid.
 */
SafemilStatus safemil_run_suite(const char *config_toml, char **out_csv);

/**
 * # Safety
 * `s` must come from this library; NULL is ignored.
 */
void safemil_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAFEMIL_H */
