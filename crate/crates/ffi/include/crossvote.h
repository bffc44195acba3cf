#ifndef CROSSVOTE_H
#define CROSSVOTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CV_PHASE_NS_GREEN 0

#define CV_PHASE_WE_GREEN 1

#define CV_RULE_MAJORITY 0

#define CV_RULE_PROPORTIONAL 1

// Result code of every fallible call.
typedef enum CvStatus {
  CV_STATUS_OK = 0,
  CV_STATUS_NULL_POINTER = 1,
  CV_STATUS_INVALID_ARGUMENT = 2,
  CV_STATUS_DIMENSION_MISMATCH = 3,
  CV_STATUS_MISSING_FILE = 4,
  CV_STATUS_CORRUPT_CHECKPOINT = 5,
  CV_STATUS_IO = 6,
  CV_STATUS_NUMERIC = 7,
  CV_STATUS_PANIC = 8,
} CvStatus;

// Frozen controller handle.
typedef struct CvController CvController;

// Q-network handle.
typedef struct CvNet CvNet;

// Simulation world handle.
typedef struct CvWorld CvWorld;

// Scenario parameters, mirroring the library's scenario config.
typedef struct CvScenario {
  uint32_t n_ns;
  uint32_t n_we;
  uint32_t horizon_steps;
  uint32_t t_act;
  double loop_length_m;
  double approach_length_m;
  uint32_t n_segments;
  double v_max_mps;
  double accel_mps2;
  double decel_mps2;
  double vehicle_length_m;
  double min_gap_m;
  double stop_speed_threshold_mps;
  double preference_split;
  uint64_t seed;
} CvScenario;

// Votes of the vehicles currently on the approaches.
typedef struct CvTally {
  uint32_t votes_stops;
  uint32_t votes_wait;
} CvTally;

// Stop events and stopped seconds since the previous drain.
typedef struct CvIntervalTotals {
  uint32_t new_stops;
  double stopped_seconds;
} CvIntervalTotals;

// Outcome of one controller decision.
typedef struct CvDecision {
  uint32_t action;
  double w_stops;
  double w_wait;
  double q_integrated[2];
} CvDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to fit). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t cv_last_error(char *buf, size_t len);

// Fill `out` with the default scenario.
//
// # Safety
// `out` must be null or point to writable memory for one `CvScenario`.
enum CvStatus cv_scenario_default(struct CvScenario *out);

// Build a world from `cfg`. On success `*out` owns a new handle.
//
// # Safety
// `cfg` must point to a valid `CvScenario`; `out` must be writable.
enum CvStatus cv_world_new(const struct CvScenario *cfg, struct CvWorld **out);

// Release a world. Null is ignored.
//
// # Safety
// `world` must be null or a handle from `cv_world_new` not yet freed.
void cv_world_free(struct CvWorld *world);

// Advance the world by one second.
//
// # Safety
// `world` must be a live handle.
enum CvStatus cv_world_tick(struct CvWorld *world);

// Set the phase (`CV_PHASE_*`) used from the next tick on.
//
// # Safety
// `world` must be a live handle.
enum CvStatus cv_world_set_phase(struct CvWorld *world, uint32_t phase);

// Current phase and clock.
//
// # Safety
// `world` must be a live handle; the out pointers must be writable.
enum CvStatus cv_world_state(const struct CvWorld *world, uint32_t *phase, uint64_t *clock);

// Length of the observation vector.
//
// # Safety
// `world` must be a live handle; `dim` must be writable.
enum CvStatus cv_world_obs_dim(const struct CvWorld *world, size_t *dim);

// Write the occupancy observation into `out[0..len]`; `len` must equal the
// observation dimension.
//
// # Safety
// `world` must be a live handle; `out` must be valid for `len` doubles.
enum CvStatus cv_world_observe(const struct CvWorld *world, double *out, size_t len);

// Tally the preferences of the vehicles on the approaches.
//
// # Safety
// `world` must be a live handle; `out` must be writable.
enum CvStatus cv_world_poll_voters(const struct CvWorld *world, struct CvTally *out);

// Return and reset the stop and wait accumulators.
//
// # Safety
// `world` must be a live handle; `out` must be writable.
enum CvStatus cv_world_drain(struct CvWorld *world, struct CvIntervalTotals *out);

// Load a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum CvStatus cv_net_load(const char *path, struct CvNet **out);

// Release a network. Null is ignored.
//
// # Safety
// `net` must be null or a handle from `cv_net_load` not yet freed.
void cv_net_free(struct CvNet *net);

// Input and output widths of a network.
//
// # Safety
// `net` must be a live handle; the out pointers must be writable.
enum CvStatus cv_net_dims(const struct CvNet *net, size_t *input, size_t *output);

// Q-values of `obs[0..obs_len]` into `q[0..q_len]`.
//
// # Safety
// `net` must be a live handle; the buffers must be valid for their lengths.
enum CvStatus cv_net_forward(const struct CvNet *net,
                             const double *obs,
                             size_t obs_len,
                             double *q,
                             size_t q_len);

// Weights of the stops and wait objectives under a vote rule (`CV_RULE_*`).
//
// # Safety
// The out pointers must be writable.
enum CvStatus cv_vote_weights(uint32_t rule, struct CvTally tally, double *w_stops, double *w_wait);

// Softmax of `q[0..len]` into `out[0..len]`.
//
// # Safety
// Both buffers must be valid for `len` doubles.
enum CvStatus cv_normalize_q(const double *q, size_t len, double *out);

// Weighted sum of two normalized Q-vectors followed by argmax, with ties
// resolved to `incumbent`. `integrated` receives the fused values.
//
// # Safety
// `q_stops`, `q_wait` and `integrated` must be valid for `len` doubles;
// `action` must be writable.
enum CvStatus cv_integrate_select(const double *q_stops,
                                  const double *q_wait,
                                  size_t len,
                                  double w_stops,
                                  double w_wait,
                                  uint32_t incumbent,
                                  double *integrated,
                                  uint32_t *action);

// Build a voting controller over a stops and a wait network. The networks
// are copied; the caller keeps ownership of its handles.
//
// # Safety
// `stops` and `wait` must be live handles; `out` must be writable.
enum CvStatus cv_controller_new_multi(const struct CvNet *stops,
                                      const struct CvNet *wait,
                                      uint32_t rule,
                                      struct CvController **out);

// Release a controller. Null is ignored.
//
// # Safety
// `c` must be null or a handle from `cv_controller_new_multi` not yet freed.
void cv_controller_free(struct CvController *c);

// Observe, poll and decide on `world` without changing it.
//
// # Safety
// `c` and `world` must be live handles; `out` must be writable.
enum CvStatus cv_controller_decide(const struct CvController *c,
                                   const struct CvWorld *world,
                                   struct CvDecision *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSVOTE_H */
