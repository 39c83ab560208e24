#ifndef NEURODIFFUSE_H
#define NEURODIFFUSE_H

#include <stddef.h>

typedef enum NdStatus {
  ND_STATUS_OK = 0,
  ND_STATUS_NULL_POINTER = 1,
  ND_STATUS_INVALID_ARGUMENT = 2,
  ND_STATUS_CONFIG = 3,
  ND_STATUS_SOLVER = 4,
  ND_STATUS_IO = 5,
  ND_STATUS_RESTORE = 6,
  ND_STATUS_BUFFER_TOO_SMALL = 7,
  ND_STATUS_PANIC = 8,
} NdStatus;

/*
 A CSD simulation with its state between calls.
 */
typedef struct NdSimulation NdSimulation;

/*
 Wave metrics; quantities that were not detected are NaN.
 */
typedef struct NdWaveMetrics {
  /*
   Mean wave speed, mm/min.
   */
  double speed;
  /*
   Wave width at the current time, mm.
   */
  double width;
  /*
   Duration of elevated extracellular potassium, s.
   */
  double duration;
  /*
   Largest neuronal potential seen, V.
   */
  double max_phi_n;
  /*
   Smallest extracellular potential seen, V.
   */
  double min_phi_e;
} NdWaveMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static nul-terminated string.
 */
const char *nd_version(void);

/*
 Copies the last error message of this thread into `buf` (nul-terminated,
 truncated to `len`). Returns the full message length, 0 if there is none.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t nd_last_error_message(char *buf, size_t len);

/*
 Creates a CSD simulation from configuration text in the CLI format
 (`key = value` lines; `model = full` selects the full model).

 # Safety
 `config` must be a nul-terminated string; `out` must be writable.
 */
enum NdStatus nd_simulation_new(const char *config, struct NdSimulation **out);

/*
 Creates a simulation from configuration text and a checkpoint file. The
 wave tracker restarts at the restored time.

 # Safety
 `config` and `path` must be nul-terminated strings; `out` must be writable.
 */
enum NdStatus nd_simulation_restore(const char *config,
                                    const char *path,
                                    struct NdSimulation **out);

/*
 Releases a handle; null is ignored.

 # Safety
 `sim` must come from this library and not be used afterwards.
 */
void nd_simulation_free(struct NdSimulation *sim);

/*
 Advances `steps` split steps. After a solver failure the handle holds the
 last state reached and should only be inspected or freed.

 # Safety
 `sim` must be a live handle.
 */
enum NdStatus nd_simulation_step(struct NdSimulation *sim, size_t steps);

/*
 Current simulated time in seconds and the number of steps taken.

 # Safety
 `sim` must be a live handle; `t` and `steps` may be null.
 */
enum NdStatus nd_simulation_time(const struct NdSimulation *sim, double *t, size_t *steps);

/*
 Number of fields and total unknowns of the PDE system.

 # Safety
 `sim` must be a live handle; outputs may be null.
 */
enum NdStatus nd_simulation_sizes(const struct NdSimulation *sim, size_t *fields, size_t *dofs);

/*
 Writes the name of field `field` (e.g. "K_e") into `buf`.

 # Safety
 `sim` must be a live handle; `buf` valid for `len` bytes.
 */
enum NdStatus nd_simulation_field_name(const struct NdSimulation *sim,
                                       size_t field,
                                       char *buf,
                                       size_t len);

/*
 Copies the dof coordinates (m) and values of one field, sorted by
 coordinate. `count` receives the number of dofs; with null `x` and `y`
 only the count is returned.

 # Safety
 `sim` must be a live handle; `x` and `y` valid for `len` doubles or null.
 */
enum NdStatus nd_simulation_field(const struct NdSimulation *sim,
                                  size_t field,
                                  double *x,
                                  double *y,
                                  size_t len,
                                  size_t *count);

/*
 Wave metrics from the steps taken so far, with the width measured now.

 # Safety
 `sim` must be a live handle; `out` must be writable.
 */
enum NdStatus nd_simulation_metrics(const struct NdSimulation *sim, struct NdWaveMetrics *out);

/*
 Writes the current state as a checkpoint file.

 # Safety
 `sim` must be a live handle; `path` a nul-terminated string.
 */
enum NdStatus nd_simulation_checkpoint(const struct NdSimulation *sim, const char *path);

/*
 1 if the handle runs the full model, 0 in the zero flow limit.

 # Safety
 `sim` must be a live handle.
 */
enum NdStatus nd_simulation_is_full(const struct NdSimulation *sim, int *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEURODIFFUSE_H */
