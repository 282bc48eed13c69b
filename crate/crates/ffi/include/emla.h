#ifndef EMLA_H
#define EMLA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum EmlaStatus {
  EMLA_STATUS_OK = 0,
  EMLA_STATUS_NULL_POINTER = 1,
  EMLA_STATUS_INVALID_ARGUMENT = 2,
  EMLA_STATUS_PARSE = 3,
  EMLA_STATUS_DOMAIN = 4,
  EMLA_STATUS_NON_FINITE = 5,
  EMLA_STATUS_INFEASIBLE = 6,
  EMLA_STATUS_SOLVER = 7,
  EMLA_STATUS_IO = 8,
  EMLA_STATUS_BUFFER_TOO_SMALL = 9,
  EMLA_STATUS_PANIC = 10,
} EmlaStatus;

/**
 * Actuator parameters.
 */
typedef struct EmlaActuator EmlaActuator;

/**
 * Closed-chain manipulator model.
 */
typedef struct EmlaManipulator EmlaManipulator;

/**
 * Steady-state efficiency map of one actuator.
 */
typedef struct EmlaMap EmlaMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *emla_version(void);

/**
 * Bytes needed to hold the last error message including the terminator;
 * zero when the last call on this thread succeeded.
 */
size_t emla_last_error_length(void);

/**
 * Copies the last error message of this thread into `buf`.
 */
enum EmlaStatus emla_last_error_message(char *buf, size_t len);

/**
 * Built-in actuator by name: `lift`, `tilt` or `telescope`.
 */
enum EmlaStatus emla_actuator_preset(const char *name, struct EmlaActuator **actuator);

/**
 * Actuator from its JSON description.
 */
enum EmlaStatus emla_actuator_from_json(const char *json, struct EmlaActuator **actuator);

void emla_actuator_free(struct EmlaActuator *actuator);

/**
 * Steady-state efficiency at load force `f_x` (N) and velocity `v_x` (m/s).
 * `feasible` is false beyond the current or voltage limit, and `eta` is then 0.
 */
enum EmlaStatus emla_actuator_efficiency(const struct EmlaActuator *actuator,
                                         double f_x,
                                         double v_x,
                                         double *eta,
                                         bool *feasible);

/**
 * Advances `state = [theta_m, omega_m, i_q, i_d]` in place by `dt` with
 * voltages and load force held.
 */
enum EmlaStatus emla_actuator_step(const struct EmlaActuator *actuator,
                                   double *state,
                                   double v_q,
                                   double v_d,
                                   double f_x,
                                   double dt);

/**
 * Efficiency map over the actuator's configured force and velocity axes.
 */
enum EmlaStatus emla_map_build(const struct EmlaActuator *actuator, struct EmlaMap **map);

/**
 * Bilinear lookup at (|f_x|, |v_x|); `inside` is false outside the grid or next to an
 * infeasible cell, and `eta` is then 0.
 */
enum EmlaStatus emla_map_interpolate(const struct EmlaMap *map,
                                     double f_x,
                                     double v_x,
                                     double *eta,
                                     bool *inside);

/**
 * Efficiency at the lower edge of the best quarter of feasible cells.
 */
enum EmlaStatus emla_map_top_quartile_threshold(const struct EmlaMap *map, double *threshold);

void emla_map_free(struct EmlaMap *map);

/**
 * Built-in three-joint manipulator.
 */
enum EmlaStatus emla_manipulator_default(struct EmlaManipulator **manipulator);

/**
 * Manipulator from its JSON description.
 */
enum EmlaStatus emla_manipulator_from_json(const char *json, struct EmlaManipulator **manipulator);

/**
 * Number of actuated joints; 0 for a null handle.
 */
size_t emla_manipulator_joint_count(const struct EmlaManipulator *manipulator);

/**
 * Actuator forces `f_x` (N) for strokes, stroke velocities and
 * accelerations; all arrays hold `n` entries.
 */
enum EmlaStatus emla_manipulator_inverse_dynamics(const struct EmlaManipulator *manipulator,
                                                  size_t n,
                                                  const double *q,
                                                  const double *qd,
                                                  const double *qdd,
                                                  double *f_x);

void emla_manipulator_free(struct EmlaManipulator *manipulator);

/**
 * Solves the trajectory problem given as JSON; `result` receives the
 * trajectory JSON, to be released with [`emla_string_free`].
 */
enum EmlaStatus emla_trajopt_solve(const struct EmlaManipulator *manipulator,
                                   const char *problem_json,
                                   char **result);

void emla_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMLA_H */
