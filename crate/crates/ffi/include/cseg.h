#ifndef CSEG_H
#define CSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of all fallible calls.
 */
typedef enum CsegStatus {
  CSEG_STATUS_OK = 0,
  CSEG_STATUS_NULL_ARGUMENT = 1,
  CSEG_STATUS_INVALID_INPUT = 2,
  CSEG_STATUS_POLICY_VIOLATION = 3,
  CSEG_STATUS_NO_SOLUTION = 4,
  CSEG_STATUS_NO_ROUND = 5,
  CSEG_STATUS_BUFFER_TOO_SMALL = 6,
  CSEG_STATUS_INTERNAL = 7,
} CsegStatus;

/*
 Opaque session handle.
 */
typedef struct CsegSession CsegSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Opens a session from files. `superpixels_path`, `probmap_path` and
 `config_json` may be null; without superpixels a grid is used.

 # Safety
 String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum CsegStatus cseg_session_new(const char *image_path,
                                 const char *superpixels_path,
                                 const char *probmap_path,
                                 const char *config_json,
                                 struct CsegSession **out);

/*
 Opens a session from an interleaved 8-bit RGB buffer of `width*height*3`
 bytes and optional superpixel labels of `width*height` entries.

 # Safety
 Buffers must hold the stated number of elements; `out` must be writable.
 */
enum CsegStatus cseg_session_new_rgb8(size_t width,
                                      size_t height,
                                      const uint8_t *rgb,
                                      const uint32_t *superpixels,
                                      const char *config_json,
                                      struct CsegSession **out);

/*
 Releases a session. Null is ignored.

 # Safety
 `session` must come from `cseg_session_new*` and not be used afterwards.
 */
void cseg_session_free(struct CsegSession *session);

/*
 Image size of the session.

 # Safety
 Pointers must be valid; `width`/`height` must be writable.
 */
enum CsegStatus cseg_session_size(struct CsegSession *session, size_t *width, size_t *height);

/*
 Adds the scribbles in `scribbles_json` (null for none) and runs a round.
 The new round's index is written to `round` when non-null.

 # Safety
 `session` must be a live handle; `scribbles_json` null or NUL-terminated.
 */
enum CsegStatus cseg_session_run_round(struct CsegSession *session,
                                       const char *scribbles_json,
                                       size_t *round);

/*
 Number of completed rounds.

 # Safety
 `session` must be null or a live handle.
 */
size_t cseg_session_round_count(const struct CsegSession *session);

/*
 Copies the class map of `round` into `buffer`, which holds `len`
 entries; `len` must be at least `width*height`.

 # Safety
 `buffer` must be writable for `len` elements.
 */
enum CsegStatus cseg_session_class_map(struct CsegSession *session,
                                       size_t round,
                                       uint32_t *buffer,
                                       size_t len);

/*
 Report of `round` as a JSON string, or null on failure. Free the result
 with `cseg_string_free`.

 # Safety
 `session` must be a live handle.
 */
char *cseg_session_report_json(struct CsegSession *session, size_t round);

/*
 Mean IoU of class maps `pred` against `truth`, both `len` entries long.
 Truth pixels equal to 255 are ignored.

 # Safety
 Both buffers must hold `len` elements; `out` must be writable.
 */
enum CsegStatus cseg_miou(const uint32_t *pred, const uint32_t *truth, size_t len, double *out);

/*
 Message of the last failure on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *cseg_last_error(void);

/*
 Static description of a status code.
 */
const char *cseg_status_string(enum CsegStatus status);

/*
 Frees a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void cseg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSEG_H */
