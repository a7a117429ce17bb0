#ifndef MAESTRO_H
#define MAESTRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MaestroStatus {
  MAESTRO_STATUS_OK = 0,
  MAESTRO_STATUS_NULL_POINTER = 1,
  MAESTRO_STATUS_INVALID_ARGUMENT = 2,
  MAESTRO_STATUS_DATA = 3,
  MAESTRO_STATUS_NUMERIC = 4,
  MAESTRO_STATUS_IO = 5,
  MAESTRO_STATUS_PANIC = 6,
} MaestroStatus;

/**
 * Opaque SAX codec.
 */
typedef struct MaestroCodec MaestroCodec;

/**
 * Opaque trained model loaded from a checkpoint.
 */
typedef struct MaestroModel MaestroModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *maestro_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *maestro_last_error(void);

/**
 * Creates a codec with alphabet size `alpha` (2..=65535).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum MaestroStatus maestro_codec_new(size_t alpha, struct MaestroCodec **out);

/**
 * # Safety
 * `codec` must be NULL or a handle from [`maestro_codec_new`] that was not freed yet.
 */
void maestro_codec_free(struct MaestroCodec *codec);

/**
 * Z-normalizes `len` values, compresses them to `word_length` segment means and
 * writes `word_length` symbols (1..=alpha) to `out_symbols`.
 *
 * # Safety
 * `codec` must be a live handle, `values` must point to `len` readable doubles and
 * `out_symbols` to `word_length` writable `uint16_t`.
 */
enum MaestroStatus maestro_codec_encode(const struct MaestroCodec *codec,
                                        const double *values,
                                        size_t len,
                                        size_t word_length,
                                        uint16_t *out_symbols);

/**
 * Lower-bounding symbolic distance between two words of `word_length` symbols
 * that encode series of `series_len` samples.
 *
 * # Safety
 * `codec` must be a live handle, `a` and `b` must each point to `word_length`
 * readable `uint16_t` and `out` to one writable double.
 */
enum MaestroStatus maestro_codec_mindist(const struct MaestroCodec *codec,
                                         const uint16_t *a,
                                         const uint16_t *b,
                                         size_t word_length,
                                         size_t series_len,
                                         double *out);

/**
 * Loads a checkpoint written by `maestro train`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer to
 * writable storage for one handle pointer.
 */
enum MaestroStatus maestro_model_load(const char *path, struct MaestroModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`maestro_model_load`] that was not freed yet.
 */
void maestro_model_free(struct MaestroModel *model);

/**
 * Number of modalities and classes the model expects.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum MaestroStatus maestro_model_info(const struct MaestroModel *model,
                                      size_t *out_modalities,
                                      size_t *out_classes);

/**
 * Variate count and series length of modality `index`.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum MaestroStatus maestro_model_modality_shape(const struct MaestroModel *model,
                                                size_t index,
                                                size_t *out_variates,
                                                size_t *out_length);

/**
 * Classifies one sample. `data[j]` points to modality `j` as `variates * length`
 * doubles, variate-major, or is NULL when that modality is missing. Writes
 * `classes` probabilities to `out_probs` and the 1-based predicted class to `out_class`.
 *
 * # Safety
 * `model` must be a live handle; `data` must point to `modalities` pointers, each
 * NULL or pointing to `variates * length` readable doubles for that modality;
 * `out_probs` must hold `classes` writable doubles and `out_class` must be writable.
 */
enum MaestroStatus maestro_model_predict(const struct MaestroModel *model,
                                         const double *const *data,
                                         size_t modalities,
                                         double *out_probs,
                                         size_t classes,
                                         size_t *out_class);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAESTRO_H */
