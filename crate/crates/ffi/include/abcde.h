#ifndef ABCDE_H
#define ABCDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AbcdeStatus {
  ABCDE_STATUS_OK = 0,
  ABCDE_STATUS_NULL_POINTER = 1,
  ABCDE_STATUS_INVALID_UTF8 = 2,
  ABCDE_STATUS_PANIC = 3,
  /**
   * Rejected input, e.g. a catalog that fails validation.
   */
  ABCDE_STATUS_INVALID = 4,
} AbcdeStatus;

/**
 * One protocol connection with its own session.
 */
typedef struct AbcdeSession AbcdeSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a session. `catalog_json` may be NULL for the built-in catalog.
 * `config_json` is the CreateSession payload (NULL for defaults).
 *
 * # Safety
 * String arguments must be NUL-terminated or NULL; `out` must be writable.
 */
enum AbcdeStatus abcde_session_new(const char *catalog_json,
                                   const char *config_json,
                                   struct AbcdeSession **out);

/**
 * # Safety
 * `session` must come from [`abcde_session_new`] and not be used afterwards.
 */
void abcde_session_free(struct AbcdeSession *session);

/**
 * Sends one request line and returns the response line, followed by any
 * push lines, joined with '\n'. Protocol errors come back inside the
 * response document with status `AbcdeStatus::Ok`. Request ids start
 * above 0, which the session itself used.
 *
 * # Safety
 * `session` must be live, `request` NUL-terminated, `out` writable.
 */
enum AbcdeStatus abcde_session_request(struct AbcdeSession *session,
                                       const char *request,
                                       char **out);

/**
 * Current 64-bit scene hash.
 *
 * # Safety
 * `session` must be live and `out` writable.
 */
enum AbcdeStatus abcde_session_scene_hash(const struct AbcdeSession *session, uint64_t *out);

/**
 * Episode log (header, events, footer) as JSONL.
 *
 * # Safety
 * `session` must be live and `out` writable.
 */
enum AbcdeStatus abcde_session_episode(const struct AbcdeSession *session, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void abcde_string_free(char *s);

/**
 * Library version, static storage.
 */
const char *abcde_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABCDE_H */
