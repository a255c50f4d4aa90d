#ifndef SEMDOC_H
#define SEMDOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SemdocStatus {
  SEMDOC_STATUS_OK = 0,
  SEMDOC_STATUS_NULL_ARGUMENT = 1,
  SEMDOC_STATUS_INVALID_UTF8 = 2,
  SEMDOC_STATUS_TEMPLATE_ERROR = 3,
  SEMDOC_STATUS_FIXTURE_ERROR = 4,
  SEMDOC_STATUS_GATEWAY_ERROR = 5,
  SEMDOC_STATUS_BUDGET_ERROR = 6,
  SEMDOC_STATUS_STATE_ERROR = 7,
  SEMDOC_STATUS_SESSION_DONE = 8,
  SEMDOC_STATUS_INCOMPLETE = 9,
  SEMDOC_STATUS_SESSION_FILE_ERROR = 10,
  SEMDOC_STATUS_PROMPT_ERROR = 11,
  SEMDOC_STATUS_PANIC = 12,
} SemdocStatus;

// What a call to [`semdoc_session_step`] produced.
typedef enum SemdocEventKind {
  SEMDOC_EVENT_KIND_SECTION_GENERATED = 0,
  SEMDOC_EVENT_KIND_INTERVENTION_REQUIRED = 1,
  SEMDOC_EVENT_KIND_SECTION_CARRIED = 2,
  SEMDOC_EVENT_KIND_COMPLETED = 3,
} SemdocEventKind;

typedef struct SemdocGateway SemdocGateway;

typedef struct SemdocSession SemdocSession;

typedef struct SemdocTemplate SemdocTemplate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Valid until the next
// failing call on the same thread; never null.
const char *semdoc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *semdoc_version(void);

// # Safety
// `s` must be null or a string returned by this library.
void semdoc_string_free(char *s);

// Parses a JSON template.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SemdocStatus semdoc_template_parse_json(const char *json, struct SemdocTemplate **out);

// Parses a plain-text template (sections separated by `---` lines).
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum SemdocStatus semdoc_template_parse_text(const char *text, struct SemdocTemplate **out);

// Number of sections, or 0 for a null handle.
//
// # Safety
// `template` must be null or a live template handle.
size_t semdoc_template_section_count(const struct SemdocTemplate *template_);

// # Safety
// `template` must be null or a handle not yet freed.
void semdoc_template_free(struct SemdocTemplate *template_);

// Builds a scripted gateway from fixture JSON.
//
// # Safety
// `fixtures_json` must be a NUL-terminated string; `out` must be writable.
enum SemdocStatus semdoc_gateway_scripted_from_json(const char *fixtures_json,
                                                    struct SemdocGateway **out);

// # Safety
// `gateway` must be null or a handle not yet freed.
void semdoc_gateway_free(struct SemdocGateway *gateway);

// Starts a session over a copy of `template` with default prompts and
// limits. `initial_prompt` may be null.
//
// # Safety
// Pointers must be valid as documented; `out` must be writable.
enum SemdocStatus semdoc_session_start(const struct SemdocTemplate *template_,
                                       const char *initial_prompt,
                                       struct SemdocSession **out);

// Advances the session by one step. On success `kind_out` holds the event
// kind and `event_json_out` (if not null) a JSON rendering of the event.
//
// # Safety
// Handles must be live; out-pointers must be writable or null where noted.
enum SemdocStatus semdoc_session_step(struct SemdocSession *session,
                                      const struct SemdocGateway *gateway,
                                      enum SemdocEventKind *kind_out,
                                      char **event_json_out);

// Answers the pending intervention; an empty string declines.
//
// # Safety
// `session` must be live; `text` a NUL-terminated string.
enum SemdocStatus semdoc_session_provide_intervention(struct SemdocSession *session,
                                                      const char *text);

// Skips the current section.
//
// # Safety
// `session` must be live.
enum SemdocStatus semdoc_session_skip(struct SemdocSession *session);

// Writes the assembled output document as JSON to `out`.
//
// # Safety
// `session` must be live; `out` writable.
enum SemdocStatus semdoc_session_assemble_json(const struct SemdocSession *session, char **out);

// Serializes the session to its JSON file format.
//
// # Safety
// `session` must be live; `out` writable.
enum SemdocStatus semdoc_session_save(const struct SemdocSession *session, char **out);

// Restores a session saved with [`semdoc_session_save`].
//
// # Safety
// `json` must be a NUL-terminated string; `out` writable.
enum SemdocStatus semdoc_session_load(const char *json, struct SemdocSession **out);

// # Safety
// `session` must be null or a handle not yet freed.
void semdoc_session_free(struct SemdocSession *session);

// Classifies a retrieval-agent reply. Sets `*all_info_out` to 1 when the
// reply reports complete information; otherwise 0 and `*missing_out` holds
// the missing-data description (null when all information is present).
//
// # Safety
// `reply` must be a NUL-terminated string; out-pointers writable.
enum SemdocStatus semdoc_parse_retrieval_response(const char *reply,
                                                  int *all_info_out,
                                                  char **missing_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMDOC_H */
