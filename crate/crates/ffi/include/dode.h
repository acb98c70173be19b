#ifndef DODE_H
#define DODE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Link state selected by [`dode_states_get`].
typedef enum DodeStateKind {
  // Arrivals per interval, vehicles.
  DODE_STATE_KIND_FLOW = 0,
  // Through travel time, seconds.
  DODE_STATE_KIND_TRAVEL_TIME = 1,
  // Smoothed vehicles present at interval end.
  DODE_STATE_KIND_DENSITY = 2,
} DodeStateKind;

// Result code of every fallible call.
typedef enum DodeStatus {
  DODE_STATUS_OK = 0,
  DODE_STATUS_NULL_POINTER = 1,
  DODE_STATUS_INVALID_ARGUMENT = 2,
  DODE_STATUS_IO = 3,
  DODE_STATUS_PARSE = 4,
  DODE_STATUS_TOPOLOGY = 5,
  DODE_STATUS_DIMENSION = 6,
  DODE_STATUS_NUMERICAL = 7,
  DODE_STATUS_CONFIG = 8,
  DODE_STATUS_PANIC = 9,
} DodeStatus;

// A network with its candidate paths and loader settings.
typedef struct DodeNetwork DodeNetwork;

// Link states from one loader run.
typedef struct DodeStates DodeStates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into the library on the same thread.
const char *dode_last_error(void);

// Builds the built-in 18-link test network with `k_paths` paths per OD pair.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DodeStatus dode_network_toy(size_t k_paths, struct DodeNetwork **out);

// Loads a network from link and OD CSV files. `nodes_path` may be null.
//
// # Safety
// Paths must be null or NUL-terminated strings; `out` must be writable.
enum DodeStatus dode_network_load(const char *links_path,
                                  const char *od_path,
                                  const char *nodes_path,
                                  size_t k_paths,
                                  struct DodeNetwork **out);

// Releases a network handle. Null is ignored.
//
// # Safety
// `net` must come from this library and not be used afterwards.
void dode_network_free(struct DodeNetwork *net);

// Writes the link count, OD pair count and horizon length in intervals.
// Any output pointer may be null.
//
// # Safety
// `net` must be a live handle; non-null outputs must be writable.
enum DodeStatus dode_network_counts(const struct DodeNetwork *net,
                                    size_t *num_links,
                                    size_t *num_od,
                                    size_t *intervals);

// Loads demand onto the network under free-flow logit route choice.
//
// `car` and `truck` hold `num_od * intervals` values each, OD-major
// (`od * intervals + t`).
//
// # Safety
// `net` must be a live handle, the demand arrays must hold `len` values and
// `out` must be writable.
enum DodeStatus dode_run_dnl(const struct DodeNetwork *net,
                             const double *car,
                             const double *truck,
                             size_t len,
                             uint64_t seed,
                             struct DodeStates **out);

// Copies one state for one class (0 car, 1 truck) into `buf`, link-major
// (`link * intervals + t`). `len` must equal `num_links * intervals`.
//
// # Safety
// `states` must be a live handle and `buf` must hold `len` values.
enum DodeStatus dode_states_get(const struct DodeStates *states,
                                enum DodeStateKind kind,
                                uint32_t class_,
                                double *buf,
                                size_t len);

// Releases a states handle. Null is ignored.
//
// # Safety
// `states` must come from this library and not be used afterwards.
void dode_states_free(struct DodeStates *states);

// Matches `n` detections to road segments within `buffer_m` meters.
//
// `classes` uses 0 car, 1 truck, anything else for other. `out_links`
// receives the matched link index, -1 when no segment is close enough and
// -2 for classes that are not modelled.
//
// # Safety
// `net` must be a live handle; every array must hold `n` elements.
enum DodeStatus dode_match_detections(const struct DodeNetwork *net,
                                      const double *xs,
                                      const double *ys,
                                      const uint8_t *classes,
                                      size_t n,
                                      double buffer_m,
                                      int64_t *out_links);

// Runs the scenario described by a TOML config. A non-null `out_dir`
// replaces the output directory named in the file.
//
// # Safety
// Both arguments must be null or NUL-terminated strings (`config_path` may
// not be null).
enum DodeStatus dode_run_scenario_file(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DODE_H */
