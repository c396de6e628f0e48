/* habitlens — C API for the sequential app-use predictability toolkit.
 *
 * The library ingests app-log event streams, trains global / personal /
 * fine-tuned sequence classifiers that predict whether the next opened
 * app is a social-media app, and emits the full analysis battery as CSV
 * artifacts. All heavy lifting happens behind this flat API: create a
 * session from a JSON option object, then run pipeline commands against
 * an output directory.
 */
#ifndef HABITLENS_H
#define HABITLENS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HABITLENS_API __declspec(dllexport)
#else
#define HABITLENS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Opaque session: holds the option set shared by subsequent commands and
 * the last error message. Not thread-safe; use one session per thread. */
typedef struct hl_session hl_session;

typedef enum hl_status {
  HL_OK = 0,
  HL_ERR_ARGUMENT = 1, /* bad option value or malformed JSON */
  HL_ERR_IO = 2,       /* missing or unreadable files */
  HL_ERR_RUNTIME = 3   /* everything else; see hl_session_last_error */
} hl_status;

/* Semantic version of the library. */
HABITLENS_API const char* hl_version(void);

/* config_json: flat JSON object of options ("out_dir", "seed", "arch",
 * "users", ...). May be NULL or "{}" when every option is supplied per
 * call. The session copies the string. */
HABITLENS_API hl_status hl_session_create(const char* config_json, hl_session** out_session);

HABITLENS_API void hl_session_destroy(hl_session* session);

/* Message describing the most recent failure on this session; owned by
 * the session, valid until the next call. Empty string when no error. */
HABITLENS_API const char* hl_session_last_error(const hl_session* session);

/* Runs one pipeline command: simulate | ingest | train-global |
 * train-personal | finetune | crosseval | sweep | ngram | descriptives |
 * correlate | report. extra_json (optional, may be NULL) overrides
 * session options for this call only. Artifacts and a manifest are
 * written under the configured out_dir. */
HABITLENS_API hl_status hl_run(hl_session* session, const char* command,
                               const char* extra_json);

/* Rank-based ROC AUC with tie handling (tied pairs count one half).
 * labels are 0/1; *out_auc is set to NaN when only one class is present.
 * Returns HL_ERR_ARGUMENT on NULL input or n == 0. */
HABITLENS_API hl_status hl_roc_auc(const double* scores, const int32_t* labels, size_t n,
                                   double* out_auc);

#ifdef __cplusplus
}
#endif

#endif /* HABITLENS_H */
