#ifndef MTKD_H
#define MTKD_H

/* Generated by cbindgen; edit the Rust sources instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtkdModelKind {
  /**
   * Image in, target-language text out.
   */
  MTKD_MODEL_KIND_TIMT = 0,
  /**
   * Image in, source-language text out.
   */
  MTKD_MODEL_KIND_TIR = 1,
  /**
   * Source text in, target text out.
   */
  MTKD_MODEL_KIND_MT = 2,
} MtkdModelKind;

typedef enum MtkdStatus {
  MTKD_STATUS_OK = 0,
  MTKD_STATUS_NULL_POINTER = 1,
  MTKD_STATUS_INVALID_ARGUMENT = 2,
  MTKD_STATUS_IO = 3,
  MTKD_STATUS_CHECKPOINT = 4,
  MTKD_STATUS_RUNTIME = 5,
  MTKD_STATUS_BUFFER_TOO_SMALL = 6,
  MTKD_STATUS_PANIC = 7,
} MtkdStatus;

/**
 * A loaded checkpoint. Create with [`mtkd_model_load`], release with
 * [`mtkd_model_free`].
 */
typedef struct MtkdModel MtkdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the calling thread's most recent failure, or null
 * after a success. Valid until the next call into this library on the
 * same thread.
 */
const char *mtkd_last_error(void);

/**
 * Seed of the glyph set used by generated corpora unless configured
 * otherwise.
 */
uint64_t mtkd_default_glyph_seed(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MtkdStatus mtkd_model_load(const char *path, struct MtkdModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`mtkd_model_load`] and not be used afterwards.
 */
void mtkd_model_free(struct MtkdModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum MtkdStatus mtkd_model_param_count(const struct MtkdModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum MtkdStatus mtkd_model_kind(const struct MtkdModel *model, enum MtkdModelKind *out);

/**
 * Greedy output of the model for source sentence `text`. Image models
 * read `text` rendered with the glyph set of `glyph_seed`; the text model
 * reads it directly and ignores the seed.
 *
 * # Safety
 * `model` must be a live handle, `text` a NUL-terminated string, `buf`
 * writable for `cap` bytes (or null with `cap` 0) and `out_len` valid.
 */
enum MtkdStatus mtkd_model_translate(const struct MtkdModel *model,
                                     const char *text,
                                     uint64_t glyph_seed,
                                     char *buf,
                                     size_t cap,
                                     size_t *out_len);

/**
 * Reference translation of `text` under the corpus rule for `alphabet`.
 *
 * # Safety
 * Same buffer contract as [`mtkd_model_translate`].
 */
enum MtkdStatus mtkd_translate_oracle(const char *text,
                                      const char *alphabet,
                                      char *buf,
                                      size_t cap,
                                      size_t *out_len);

/**
 * Character-level corpus BLEU-4 in `[0, 100]` of `n` hypotheses against
 * one reference each.
 *
 * # Safety
 * `hyps` and `refs` must each point to `n` NUL-terminated strings and
 * `out` must be valid.
 */
enum MtkdStatus mtkd_corpus_bleu(const char *const *hyps,
                                 const char *const *refs,
                                 size_t n,
                                 double *out);

/**
 * Renders `text` as a `32 x (8 * chars)` single-channel image, row-major.
 * Height and width are always reported; pixels are written only when
 * `cap` covers them.
 *
 * # Safety
 * `text` must be NUL-terminated, `pixels` writable for `cap` floats (or
 * null with `cap` 0) and both dimension pointers valid.
 */
enum MtkdStatus mtkd_render_text_image(const char *text,
                                       uint64_t glyph_seed,
                                       float *pixels,
                                       size_t cap,
                                       size_t *out_height,
                                       size_t *out_width);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTKD_H */
