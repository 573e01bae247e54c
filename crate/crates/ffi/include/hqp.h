#ifndef HQP_H
#define HQP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 2-4 match the exit codes of the `hqp` command.
typedef enum HqpStatus {
  HQP_STATUS_OK = 0,
  // A required pointer argument was null.
  HQP_STATUS_NULL_POINTER = 1,
  // Unreadable, malformed or invalid input.
  HQP_STATUS_CONFIG = 2,
  // A QP or task evaluation failed during a step.
  HQP_STATUS_SOLVER = 3,
  // The step penetrated an obstacle or left the joint limits.
  HQP_STATUS_SAFETY = 4,
  // An output buffer is shorter than required.
  HQP_STATUS_BUFFER_TOO_SMALL = 5,
  // The simulation has already reached its duration or failed.
  HQP_STATUS_FINISHED = 6,
  // Internal error; the handle involved should be freed.
  HQP_STATUS_PANIC = 7,
} HqpStatus;

// Opaque kinematic chain.
typedef struct HqpChain HqpChain;

// Opaque closed-loop simulation of a scenario.
typedef struct HqpSimulation HqpSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *hqp_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on this thread.
const char *hqp_last_error(void);

// Parse a chain description (JSON text).
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum HqpStatus hqp_chain_from_json(const char *json, struct HqpChain **out);

// Load a chain description from a JSON file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum HqpStatus hqp_chain_from_file(const char *path, struct HqpChain **out);

// The bundled 7-DOF arm with a 3-DOF tool.
//
// # Safety
// `out` must be a valid pointer.
enum HqpStatus hqp_chain_bundled(struct HqpChain **out);

// # Safety
// `chain` must be null or a handle from this library that is not used again.
void hqp_chain_free(struct HqpChain *chain);

// Number of joint coordinates, or 0 for a null handle.
//
// # Safety
// `chain` must be null or a live handle.
size_t hqp_chain_dof(const struct HqpChain *chain);

// End-effector pose at `q` as a row-major 4×4 homogeneous matrix.
//
// # Safety
// `q` must hold `q_len` values and `out` at least `out_len`.
enum HqpStatus hqp_chain_end_effector_pose(const struct HqpChain *chain,
                                           const double *q,
                                           size_t q_len,
                                           double *out,
                                           size_t out_len);

// Geometric Jacobian of the end effector (linear rows first) as a row-major
// 6×dof matrix.
//
// # Safety
// `q` must hold `q_len` values and `out` at least `out_len`.
enum HqpStatus hqp_chain_jacobian(const struct HqpChain *chain,
                                  const double *q,
                                  size_t q_len,
                                  double *out,
                                  size_t out_len);

// Load a scenario file. Relative chain paths resolve against its directory.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum HqpStatus hqp_simulation_from_file(const char *path, struct HqpSimulation **out);

// Parse scenario JSON text; relative chain paths resolve against `base_dir`.
//
// # Safety
// `json` and `base_dir` must be nul-terminated strings and `out` a valid pointer.
enum HqpStatus hqp_simulation_from_json(const char *json,
                                        const char *base_dir,
                                        struct HqpSimulation **out);

// # Safety
// `sim` must be null or a handle from this library that is not used again.
void hqp_simulation_free(struct HqpSimulation *sim);

// Number of chains, or 0 for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
size_t hqp_simulation_chain_count(const struct HqpSimulation *sim);

// Joint count of chain `chain`, or 0 when out of range.
//
// # Safety
// `sim` must be null or a live handle.
size_t hqp_simulation_dof(const struct HqpSimulation *sim, size_t chain);

// Simulated time (s), or NaN for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
double hqp_simulation_time(const struct HqpSimulation *sim);

// Steps still to run before the configured duration is reached.
//
// # Safety
// `sim` must be null or a live handle.
size_t hqp_simulation_steps_remaining(const struct HqpSimulation *sim);

// Advance one control period. Returns `Safety` when this step recorded a
// violation and `Finished` when there is nothing left to run.
//
// # Safety
// `sim` must be a live handle.
enum HqpStatus hqp_simulation_step(struct HqpSimulation *sim);

// Run to the end. Returns `Solver` if a step failed and `Safety` if any
// violation was recorded, like the `hqp run` command.
//
// # Safety
// `sim` must be a live handle.
enum HqpStatus hqp_simulation_run(struct HqpSimulation *sim);

// Current configuration of chain `chain`.
//
// # Safety
// `out` must hold at least `out_len` values.
enum HqpStatus hqp_simulation_q(const struct HqpSimulation *sim,
                                size_t chain,
                                double *out,
                                size_t out_len);

// Write `chain{i}_steps.csv` and `chain{i}_summary.json` for the steps run so far.
//
// # Safety
// `sim` must be a live handle and `dir` a nul-terminated string.
enum HqpStatus hqp_simulation_write(const struct HqpSimulation *sim, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HQP_H */
