/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef GRIDARB_H
#define GRIDARB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
enum GridarbStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  GRIDARB_STATUS_OK = 0,
  GRIDARB_STATUS_NULL_POINTER = 1,
  GRIDARB_STATUS_INVALID_ARGUMENT = 2,
  GRIDARB_STATUS_BUFFER_TOO_SMALL = 3,
  GRIDARB_STATUS_CONFIG = 4,
  GRIDARB_STATUS_NETWORK = 5,
  GRIDARB_STATUS_DATA = 6,
  GRIDARB_STATUS_NOT_RESET = 7,
  GRIDARB_STATUS_EPISODE_FINISHED = 8,
  GRIDARB_STATUS_ACTION_DIMENSION_MISMATCH = 9,
  GRIDARB_STATUS_NON_FINITE_ACTION = 10,
  GRIDARB_STATUS_NOT_CONVERGED = 11,
  GRIDARB_STATUS_POWER_FLOW = 12,
  GRIDARB_STATUS_PANIC = 13,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum GridarbStatus GridarbStatus;
#else
typedef int32_t GridarbStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Dispatch environment bound to one config and dataset.
 */
typedef struct GridarbEnv GridarbEnv;

/**
 * Network with a prepared fixed-point solver.
 */
typedef struct GridarbNetwork GridarbNetwork;

/**
 * Scalar outputs of one environment step.
 */
typedef struct GridarbStepResult {
  double reward;
  double arbitrage_term;
  double penalty_term;
  double violation_sum;
  double slack_p;
  bool done;
  bool converged;
} GridarbStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gridarb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gridarb_version(void);

/**
 * Loads a config file with its network, fleet and dataset.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string and `out` a valid pointer.
 */
GridarbStatus gridarb_env_open(const char *config_path, struct GridarbEnv **out);

/**
 * Releases an environment. Null is ignored.
 *
 * # Safety
 * `env` must come from [`gridarb_env_open`] and not be used afterwards.
 */
void gridarb_env_free(struct GridarbEnv *env);

/**
 * Length of state vectors, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t gridarb_env_state_dim(const struct GridarbEnv *env);

/**
 * Number of storage units, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t gridarb_env_action_dim(const struct GridarbEnv *env);

/**
 * Steps per episode, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t gridarb_env_horizon(const struct GridarbEnv *env);

/**
 * Complete days available for reset, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t gridarb_env_day_count(const struct GridarbEnv *env);

/**
 * Starts an episode on day `day` and writes the initial state.
 *
 * # Safety
 * `env` must be a live handle; `state_out` must hold `state_len` values.
 */
GridarbStatus gridarb_env_reset_day(struct GridarbEnv *env,
                                    size_t day,
                                    double *state_out,
                                    size_t state_len);

/**
 * Starts an episode on a day drawn from `seed`.
 *
 * # Safety
 * `env` must be a live handle; `state_out` must hold `state_len` values.
 */
GridarbStatus gridarb_env_reset_random(struct GridarbEnv *env,
                                       uint64_t seed,
                                       double *state_out,
                                       size_t state_len);

/**
 * Applies one action (kW per unit, charging positive).
 *
 * Writes the next state to `state_out`, the scalar results to `result` and,
 * when `realized_out` is non-null, the clipped powers (`action_len` values).
 *
 * # Safety
 * `env` must be a live handle; buffers must hold the stated lengths.
 */
GridarbStatus gridarb_env_step(struct GridarbEnv *env,
                               const double *action,
                               size_t action_len,
                               double *state_out,
                               size_t state_len,
                               double *realized_out,
                               struct GridarbStepResult *result);

/**
 * Loads node and line tables and prepares the fixed-point solver.
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` a valid pointer.
 */
GridarbStatus gridarb_network_open(const char *nodes_path,
                                   const char *lines_path,
                                   double base_mva,
                                   struct GridarbNetwork **out);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `net` must come from [`gridarb_network_open`] and not be used afterwards.
 */
void gridarb_network_free(struct GridarbNetwork *net);

/**
 * Number of nodes including the slack, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t gridarb_network_node_count(const struct GridarbNetwork *net);

/**
 * Solves the power flow for per-unit injections at the PQ nodes
 * (`node_count − 1` values each, generation positive) and writes voltage
 * magnitudes for every node, slack first.
 *
 * On `NotConverged` the best iterate is still written.
 *
 * # Safety
 * `net` must be a live handle; buffers must hold the stated lengths.
 */
GridarbStatus gridarb_network_solve(const struct GridarbNetwork *net,
                                    const double *p,
                                    const double *q,
                                    size_t pq_len,
                                    double tolerance,
                                    size_t max_iterations,
                                    double *v_mag_out,
                                    size_t v_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDARB_H */
