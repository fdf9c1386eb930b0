/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef MEMENTOMAP_H
#define MEMENTOMAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmDisposition {
  MM_DISPOSITION_PRESENT = 0,
  MM_DISPOSITION_ABSENT_EXPLICIT = 1,
  MM_DISPOSITION_ABSENT_NO_MATCH = 2,
} MmDisposition;

typedef enum MmModifier {
  MM_MODIFIER_EXACT = 0,
  MM_MODIFIER_AT_LEAST = 1,
  MM_MODIFIER_AT_MOST = 2,
  MM_MODIFIER_APPROX = 3,
} MmModifier;

typedef enum MmStatus {
  MM_STATUS_OK = 0,
  MM_STATUS_INVALID_ARGUMENT = 1,
  MM_STATUS_BUFFER_TOO_SMALL = 2,
  MM_STATUS_MALFORMED_URI = 3,
  MM_STATUS_MALFORMED_DATA = 4,
  MM_STATUS_UNSORTED_INPUT = 5,
  MM_STATUS_NOT_SEEKABLE = 6,
  MM_STATUS_DOMAIN = 7,
  MM_STATUS_INSUFFICIENT_STATS = 8,
  MM_STATUS_IO = 9,
  MM_STATUS_INTERNAL = 10,
} MmStatus;

/**
 * An open map file. Not safe to share between threads without locking.
 */
typedef struct MmMap MmMap;

/**
 * Outcome of one lookup. Count fields are zero when nothing matched.
 */
typedef struct MmLookupResult {
  enum MmDisposition disposition;
  uint64_t urim;
  enum MmModifier urim_modifier;
  bool has_urir;
  uint64_t urir;
  enum MmModifier urir_modifier;
  uint64_t probes;
  /**
   * Length of the matched key in bytes, excluding the NUL.
   */
  size_t key_len;
} MmLookupResult;

typedef struct MmCompactReport {
  uint64_t lines_in;
  uint64_t lines_out;
  uint64_t rollups;
  uint64_t bytes_out;
  size_t peak_trail;
  double wall_seconds;
} MmCompactReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` and returns
 * its length excluding the NUL. Pass a null buffer to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t mm_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mm_version(void);

/**
 * Opens an uncompressed map for lookups.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum MmStatus mm_map_open(const char *path, struct MmMap **out);

/**
 * Releases a map. Null is ignored.
 *
 * # Safety
 * `map` must come from [`mm_map_open`] and not be used afterwards.
 */
void mm_map_close(struct MmMap *map);

/**
 * Size of the map file in bytes.
 *
 * # Safety
 * `map` must be a live handle.
 */
uint64_t mm_map_len(const struct MmMap *map);

/**
 * Looks `uri` up. A miss is still `MM_STATUS_OK`; check `out->disposition`.
 * The matched key is copied into `key_buf` when one matched.
 *
 * # Safety
 * `map` must be a live handle, `uri` a C string, `out` valid, and `key_buf`
 * null or valid for `key_buf_len` bytes.
 */
enum MmStatus mm_map_lookup(struct MmMap *map,
                            const char *uri,
                            struct MmLookupResult *out,
                            char *key_buf,
                            size_t key_buf_len);

/**
 * Writes the SURT form of `uri`.
 *
 * # Safety
 * `uri` must be a C string; `buf` null or valid for `len` bytes; `needed`
 * null or valid.
 */
enum MmStatus mm_surtify(const char *uri, char *buf, size_t len, size_t *needed);

/**
 * Writes the HxPx lookup key of `uri`.
 *
 * # Safety
 * Same contract as [`mm_surtify`].
 */
enum MmStatus mm_hxpx_key(const char *uri, char *buf, size_t len, size_t *needed);

/**
 * Reduction coefficient of a depth row.
 *
 * # Safety
 * `out` must be valid.
 */
enum MmStatus mm_redq(uint64_t count, uint64_t sum, uint64_t total, double *out);

/**
 * Compacts the map at `input` into `output`. With a non-null
 * `cutoffs_json` that table is used; otherwise cutoffs are fitted on the
 * input's depth statistics and scaled by `wh` and `wp`.
 *
 * # Safety
 * `input` and `output` must be C strings; `cutoffs_json` null or a C
 * string; `report` null or valid.
 */
enum MmStatus mm_compact_file(const char *input,
                              const char *output,
                              double wh,
                              double wp,
                              const char *cutoffs_json,
                              struct MmCompactReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMENTOMAP_H */
