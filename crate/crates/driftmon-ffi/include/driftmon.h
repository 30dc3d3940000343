#ifndef DRIFTMON_H
#define DRIFTMON_H

/* Generated by cbindgen from the driftmon-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a driftmon call.
typedef enum DmStatus {
  // The call succeeded.
  DM_STATUS_OK = 0,
  // A required pointer argument was null.
  DM_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  DM_STATUS_INVALID_UTF8 = 2,
  // Reading or writing a file failed.
  DM_STATUS_IO = 3,
  // A state file failed its checksum or consistency checks.
  DM_STATUS_CORRUPT = 4,
  // A state file was written by an unsupported format version.
  DM_STATUS_VERSION_MISMATCH = 5,
  // An event record could not be parsed.
  DM_STATUS_PARSE = 6,
  // An event timestamp precedes data the monitor has already seen.
  DM_STATUS_OUT_OF_ORDER = 7,
  // An argument was structurally valid but semantically rejected.
  DM_STATUS_INVALID = 8,
  // An unexpected internal failure; details in the last error message.
  DM_STATUS_INTERNAL = 9,
} DmStatus;

// Opaque handle to a loaded monitor.
typedef struct DmMonitor DmMonitor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the library version as a static NUL-terminated string.
const char *dm_version(void);

// Returns the state file format version this library reads and writes,
// as a static NUL-terminated string.
const char *dm_state_format_version(void);

// Returns a description of the most recent failure on this thread. The
// pointer stays valid until the next driftmon call on the same thread and
// must not be freed.
const char *dm_last_error_message(void);

// Loads a trained monitor from `path` into `*out`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum DmStatus dm_monitor_open(const char *path, struct DmMonitor **out);

// Releases a monitor handle. Passing null is a no-op.
//
// # Safety
// `monitor` must be null or a handle from `dm_monitor_open` that has not
// been closed yet.
void dm_monitor_close(struct DmMonitor *monitor);

// Writes the number of monitored features to `*out_count`.
//
// # Safety
// `monitor` must be an open handle and `out_count` a valid pointer.
enum DmStatus dm_monitor_feature_count(const struct DmMonitor *monitor, uintptr_t *out_count);

// Ingests one event given as a JSON object on a single line. The object
// must carry the schema's timestamp field; feature fields that are absent
// or null count as missing values.
//
// # Safety
// `monitor` must be an open handle and `event_json` a valid
// NUL-terminated string.
enum DmStatus dm_monitor_ingest_json(struct DmMonitor *monitor, const char *event_json);

// Runs a check at `at_ns` (nanoseconds since the Unix epoch) and stores
// the full check report as a JSON string in `*out_json`. The caller owns
// the string and must release it with `dm_string_free`.
//
// # Safety
// `monitor` must be an open handle and `out_json` a valid pointer.
enum DmStatus dm_monitor_check_json(struct DmMonitor *monitor, int64_t at_ns, char **out_json);

// Saves the monitor's current state to `path`, replacing any existing
// file atomically.
//
// # Safety
// `monitor` must be an open handle and `path` a valid NUL-terminated
// string.
enum DmStatus dm_monitor_save(const struct DmMonitor *monitor, const char *path);

// Releases a string returned by this library. Passing null is a no-op.
//
// # Safety
// `s` must be null or a string given out by this library that has not
// been freed yet.
void dm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTMON_H */
