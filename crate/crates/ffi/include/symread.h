#ifndef SYMREAD_H
#define SYMREAD_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_POINTER = 1,
  SR_STATUS_INVALID_UTF8 = 2,
  SR_STATUS_PARSE_ERROR = 3,
  SR_STATUS_MODEL_ERROR = 4,
  SR_STATUS_INVALID_ARGUMENT = 5,
  SR_STATUS_EVAL_ERROR = 6,
} SrStatus;

typedef enum SrStrategy {
  SR_STRATEGY_ITE = 0,
  SR_STRATEGY_BST = 1,
  SR_STRATEGY_LINEARIZED = 2,
} SrStrategy;

/**
 * Opaque bitvector expression.
 */
typedef struct SrExpr SrExpr;

/**
 * Opaque modeled read.
 */
typedef struct SrRead SrRead;

/**
 * Opaque memory snapshot.
 */
typedef struct SrSnapshot SrSnapshot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message of this thread, or null. Valid until the next failing
 * call on the same thread.
 */
const char *sr_last_error(void);

/**
 * Library version string (static).
 */
const char *sr_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void sr_string_free(char *s);

/**
 * Parses an s-expression. `decls` is null or `"x:8,y:64"` for bare
 * variable names.
 *
 * # Safety
 * String arguments must be null-terminated; `out` must be writable.
 */
enum SrStatus sr_expr_parse(const char *src, const char *decls, struct SrExpr **out);

/**
 * # Safety
 * `e` must be null or a live handle.
 */
void sr_expr_free(struct SrExpr *e);

/**
 * Width in bits, 0 for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
uint32_t sr_expr_width(const struct SrExpr *e);

/**
 * S-expression text; free with `sr_string_free`.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
char *sr_expr_to_string(const struct SrExpr *e);

/**
 * Evaluates an expression of at most 64 bits. `names`/`values` hold `n`
 * variable bindings.
 *
 * # Safety
 * `names` and `values` must point to `n` entries; `out` must be writable.
 */
enum SrStatus sr_expr_eval(const struct SrExpr *e,
                           const char *const *names,
                           const uint64_t *values,
                           size_t n,
                           uint64_t *out);

/**
 * Parses the snapshot text format (header line plus one line per cell).
 *
 * # Safety
 * `src` must be null-terminated; `out` must be writable.
 */
enum SrStatus sr_snapshot_parse(const char *src, struct SrSnapshot **out);

/**
 * Snapshot of `len` concrete cells of `access_size` bytes (at most 8) laid
 * out from `base`.
 *
 * # Safety
 * `values` must point to `len` entries; `out` must be writable.
 */
enum SrStatus sr_snapshot_from_values(uint64_t base,
                                      uint32_t access_size,
                                      const uint64_t *values,
                                      size_t len,
                                      uint64_t current_offset,
                                      struct SrSnapshot **out);

/**
 * # Safety
 * `s` must be null or a live handle.
 */
void sr_snapshot_free(struct SrSnapshot *s);

/**
 * Snapshot text; free with `sr_string_free`.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
char *sr_snapshot_to_string(const struct SrSnapshot *s);

/**
 * Models a read of `snap` at the 64-bit address `addr`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SrStatus sr_model_read(const struct SrSnapshot *snap,
                            const struct SrExpr *addr,
                            enum SrStrategy strategy,
                            struct SrRead **out);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
void sr_read_free(struct SrRead *r);

/**
 * New expression handle for the read value.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
struct SrExpr *sr_read_expr(const struct SrRead *r);

/**
 * Whether a linearized request was built as a nested ITE instead.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
bool sr_read_fell_back(const struct SrRead *r);

/**
 * Number of linear segments in a linearized read.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
size_t sr_read_segment_count(const struct SrRead *r);

/**
 * SMT-LIBv2 script defining the read as `read`; free with `sr_string_free`.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
char *sr_read_smtlib(const struct SrRead *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYMREAD_H */
