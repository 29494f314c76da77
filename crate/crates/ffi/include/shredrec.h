/* C interface for the shredrec document-reconstruction library. */

#ifndef SHREDREC_H
#define SHREDREC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes for every fallible entry point.
typedef enum ShredrecStatus {
  Ok = 0,
  NullArgument = 1,
  InvalidUtf8 = 2,
  IoError = 3,
  BadModel = 4,
  BadInstance = 5,
  ReconstructionFailed = 6,
  BufferTooSmall = 7,
  InternalPanic = 8,
} ShredrecStatus;

// Opaque reconstruction instance (shreds in presentation order).
typedef struct ShredrecInstance ShredrecInstance;

// Opaque trained model pair.
typedef struct ShredrecProjector ShredrecProjector;

// Opaque solved ordering.
typedef struct ShredrecSolution ShredrecSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static C string.
const char *shredrec_version(void);

// Static description of a status code.
const char *shredrec_status_message(enum ShredrecStatus status);

// Loads trained weights (.shrw) into a new projector handle.
//
// # Safety
// `path` must point to a NUL-terminated string and `out` to writable
// pointer storage; both must stay valid for the duration of the call.
enum ShredrecStatus shredrec_projector_load(const char *path, struct ShredrecProjector **out);

// Builds a freshly initialized projector (square s x s samples).
//
// # Safety
// `out` must point to writable pointer storage.
enum ShredrecStatus shredrec_projector_build(uint32_t d,
                                             uint32_t s,
                                             uint64_t seed,
                                             struct ShredrecProjector **out);

// Embedding dimension of a projector handle.
//
// # Safety
// `p` must be a live handle from this library (or null, which yields 0).
uint32_t shredrec_projector_dim(const struct ShredrecProjector *p);

// # Safety
// `p` must be a handle produced by this library, not yet freed.
void shredrec_projector_free(struct ShredrecProjector *p);

// Loads a shred directory (PNG files plus manifest.json).
//
// # Safety
// `dir` must be a NUL-terminated string; `out` valid pointer storage.
enum ShredrecStatus shredrec_instance_load_dir(const char *dir, struct ShredrecInstance **out);

// Builds an instance by binarizing a grayscale page (row-major, one
// byte per pixel, 0 = black) and cutting it into `strips` shreds.
//
// # Safety
// `pixels` must point to `width * height` readable bytes; `out` must be
// valid pointer storage.
enum ShredrecStatus shredrec_instance_from_page(const uint8_t *pixels,
                                                uint32_t width,
                                                uint32_t height,
                                                uint32_t strips,
                                                struct ShredrecInstance **out);

// Number of shreds in the instance.
//
// # Safety
// `inst` must be a live handle (or null, which yields 0).
uintptr_t shredrec_instance_len(const struct ShredrecInstance *inst);

// Seeded shuffle of the presentation order.
//
// # Safety
// `inst` must be a live handle from this library.
enum ShredrecStatus shredrec_instance_permute(struct ShredrecInstance *inst, uint64_t seed);

// # Safety
// `inst` must be a handle produced by this library, not yet freed.
void shredrec_instance_free(struct ShredrecInstance *inst);

// Embeds every boundary once, builds the cost matrix and orders the
// shreds (exact solver up to 20 shreds, heuristic beyond).
//
// # Safety
// `p` and `inst` must be live handles; `out` valid pointer storage.
enum ShredrecStatus shredrec_reconstruct(const struct ShredrecProjector *p,
                                         const struct ShredrecInstance *inst,
                                         uint32_t delta_max,
                                         struct ShredrecSolution **out);

// Number of entries in the solved order.
//
// # Safety
// `sol` must be a live handle (or null, which yields 0).
uintptr_t shredrec_solution_len(const struct ShredrecSolution *sol);

// Accumulated pairwise cost of the solved order.
//
// # Safety
// `sol` must be a live handle (or null, which yields NaN).
double shredrec_solution_objective(const struct ShredrecSolution *sol);

// Boundary inference count of the reconstruction that produced `sol`
// (2n for an n-shred instance).
//
// # Safety
// `sol` must be a live handle (or null, which yields 0).
uint64_t shredrec_solution_inferences(const struct ShredrecSolution *sol);

// Copies the solved order (presentation indices) into `buf`.
//
// # Safety
// `buf` must point to at least `buf_len` writable usize slots.
enum ShredrecStatus shredrec_solution_order(const struct ShredrecSolution *sol,
                                            uintptr_t *buf,
                                            uintptr_t buf_len);

// Fraction of adjacent placements that are ground-truth positives;
// `relaxed` additionally accepts cross-page last-to-first seams.
//
// # Safety
// `sol` and `inst` must be live handles; `out` valid writable storage.
enum ShredrecStatus shredrec_solution_accuracy(const struct ShredrecSolution *sol,
                                               const struct ShredrecInstance *inst,
                                               bool relaxed,
                                               double *out);

// # Safety
// `sol` must be a handle produced by this library, not yet freed.
void shredrec_solution_free(struct ShredrecSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHREDREC_H */
