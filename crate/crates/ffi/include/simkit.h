#ifndef SIMKIT_H
#define SIMKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SkStatus {
  SK_STATUS_OK = 0,
  SK_STATUS_NULL_ARGUMENT = 1,
  SK_STATUS_INVALID_ARGUMENT = 2,
  SK_STATUS_NOT_FOUND = 3,
  SK_STATUS_DECODE = 4,
  SK_STATUS_STEP = 5,
  SK_STATUS_IO = 6,
  SK_STATUS_DIVERGED = 7,
  SK_STATUS_PANIC = 8,
} SkStatus;

/**
 * An owned world state.
 */
typedef struct SkWorld SkWorld;

/**
 * Bytes allocated by the library; release with `sk_buffer_free`.
 */
typedef struct SkBuffer {
  uint8_t *data;
  size_t len;
} SkBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The last error message on this thread; valid until the next failing call.
 */
const char *sk_last_error(void);

/**
 * Library version as a static string.
 */
const char *sk_version(void);

/**
 * Number of cells in a frame.
 */
size_t sk_frame_cells(void);

/**
 * Instantiates a registry task's initial state.
 *
 * # Safety
 * `task_id` must be a nul-terminated string and `out` a valid pointer.
 */
enum SkStatus sk_world_new_task(const char *task_id, uint64_t seed, struct SkWorld **out);

/**
 * Restores a world from save-state bytes.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be valid.
 */
enum SkStatus sk_world_load(const uint8_t *bytes, size_t len, struct SkWorld **out);

/**
 * # Safety
 * `world` must come from this library and not be used afterwards.
 */
void sk_world_free(struct SkWorld *world);

/**
 * Advances one tick. `keys` is a bit set over the 16 keys, `buttons` bit 0 is left and
 * bit 1 is right. Writes the new frame hash to `hash_out` when non-null.
 *
 * # Safety
 * `world` must be a live handle; `hash_out` null or valid.
 */
enum SkStatus sk_world_step(struct SkWorld *world,
                            uint16_t keys,
                            int8_t mouse_dx,
                            int8_t mouse_dy,
                            uint8_t buttons,
                            uint64_t *hash_out);

/**
 * # Safety
 * `world` must be a live handle.
 */
uint64_t sk_world_tick(const struct SkWorld *world);

/**
 * # Safety
 * `world` must be a live handle.
 */
uint64_t sk_world_frame_hash(const struct SkWorld *world);

/**
 * Writes the current frame as joint cell ids (row-major) into `cells`, which must hold
 * `sk_frame_cells()` entries.
 *
 * # Safety
 * `cells` must point to `len` writable `u16`s.
 */
enum SkStatus sk_world_frame(const struct SkWorld *world, uint16_t *cells, size_t len);

/**
 * Serializes the world into a library-owned buffer.
 *
 * # Safety
 * `world` must be live and `out` valid.
 */
enum SkStatus sk_world_save(const struct SkWorld *world, struct SkBuffer *out);

/**
 * # Safety
 * `buf` must have been filled by this library.
 */
void sk_buffer_free(struct SkBuffer *buf);

/**
 * Replays a trajectory file; writes the number of replayed ticks to `ticks_out`.
 * Returns `Diverged` when a frame hash differs.
 *
 * # Safety
 * `path` must be nul-terminated; `ticks_out` null or valid.
 */
enum SkStatus sk_replay_file(const char *path, uint64_t *ticks_out);

/**
 * Success rate and normal-approximation 95% half-width.
 *
 * # Safety
 * `rate` and `ci95` must be valid.
 */
enum SkStatus sk_success_rate(size_t successes, size_t n, double *rate, double *ci95);

/**
 * Guided logits `cond + lambda * (cond - uncond)` over `len` values (a multiple of the
 * per-step width).
 *
 * # Safety
 * All three arrays must hold `len` values.
 */
enum SkStatus sk_cfg_combine(const double *cond,
                             const double *uncond,
                             size_t len,
                             double lambda,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMKIT_H */
