#ifndef A2A_H
#define A2A_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum {
  A2A_STATUS_OK = 0,
  A2A_STATUS_INVALID_ARGUMENT = 1,
  A2A_STATUS_NUMERIC = 2,
  A2A_STATUS_FORMAT = 3,
  A2A_STATUS_IO = 4,
  A2A_STATUS_CONFIG = 5,
  A2A_STATUS_NULL_POINTER = 6,
  A2A_STATUS_BUFFER_SIZE = 7,
  A2A_STATUS_PANIC = 8,
} A2aStatus;

/**
 * A run configuration.
 */
typedef struct A2aConfig A2aConfig;

/**
 * An `N x H x W` complex stack.
 */
typedef struct A2aStack A2aStack;

/**
 * Image quality of one frame.
 */
typedef struct {
  double snr_db;
  double cnr;
  double gcnr;
  double psnr_db;
  double ssim;
} A2aMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *a2a_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *a2a_version(void);

/**
 * Builds a stack from `2 * n * h * w` interleaved floats.
 *
 * # Safety
 * `data` must point to `len` readable floats; `out` must be writable.
 */
A2aStatus a2a_stack_new(uint32_t n,
                        uint32_t h,
                        uint32_t w,
                        const float *data,
                        size_t len,
                        A2aStack **out);

/**
 * # Safety
 * `stack` must be null or a handle from this library not yet freed.
 */
void a2a_stack_free(A2aStack *stack);

/**
 * # Safety
 * `stack` must be a live handle; the output pointers must be writable.
 */
A2aStatus a2a_stack_dims(const A2aStack *stack, uint32_t *n, uint32_t *h, uint32_t *w);

/**
 * Copies the `2 * n * h * w` samples into `out`.
 *
 * # Safety
 * `stack` must be a live handle; `out` must hold `len` floats.
 */
A2aStatus a2a_stack_copy_data(const A2aStack *stack, float *out, size_t len);

/**
 * Writes the coherent sum over apertures (`2 * h * w` floats) into `out`.
 *
 * # Safety
 * `stack` must be a live handle; `out` must hold `len` floats.
 */
A2aStatus a2a_stack_compound(const A2aStack *stack, float *out, size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
A2aStatus a2a_stack_read(const char *path, A2aStack **out);

/**
 * # Safety
 * `stack` must be a live handle; `path` a NUL-terminated string.
 */
A2aStatus a2a_stack_write(const A2aStack *stack, const char *path);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be writable.
 */
A2aStatus a2a_config_default(A2aConfig **out);

/**
 * Parses and validates a JSON configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
A2aStatus a2a_config_from_json(const char *json, A2aConfig **out);

/**
 * Applies one `section.key=value` override. Unknown keys and values of the
 * wrong type are rejected and leave the config unchanged; cross-field
 * checks run in [`a2a_config_validate`] and before every operation.
 *
 * # Safety
 * `config` must be a live handle; `assignment` a NUL-terminated string.
 */
A2aStatus a2a_config_set(A2aConfig *config, const char *assignment);

/**
 * # Safety
 * `config` must be a live handle.
 */
A2aStatus a2a_config_validate(const A2aConfig *config);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void a2a_config_free(A2aConfig *config);

/**
 * Generates the configured phantom. Either output may be null to skip it.
 *
 * # Safety
 * `config` must be a live handle; non-null outputs must be writable.
 */
A2aStatus a2a_simulate(const A2aConfig *config, A2aStack **noisy_out, A2aStack **clean_out);

/**
 * Fits the model on `stack` and returns the decoded clean stack.
 * `steps_run` may be null.
 *
 * # Safety
 * `stack` and `config` must be live handles; `out` must be writable.
 */
A2aStatus a2a_denoise(const A2aStack *stack,
                      const A2aConfig *config,
                      A2aStack **out,
                      uint32_t *steps_run);

/**
 * Runs `raw`, `cf`, `pcf` or `srad` and returns a single-plane stack.
 *
 * # Safety
 * `stack` and `config` must be live handles, `method` a NUL-terminated
 * string and `out` writable.
 */
A2aStatus a2a_baseline(const A2aStack *stack,
                       const A2aConfig *config,
                       const char *method,
                       A2aStack **out);

/**
 * Metrics of the compound of `stack` against the compound of `reference`,
 * with regions from the configuration.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
A2aStatus a2a_metrics(const A2aStack *stack,
                      const A2aStack *reference,
                      const A2aConfig *config,
                      A2aMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* A2A_H */
