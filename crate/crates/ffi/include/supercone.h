#ifndef SUPERCONE_H
#define SUPERCONE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  SC_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  SC_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was malformed or does not fit the model.
   */
  SC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The model file could not be read.
   */
  SC_STATUS_IO = 3,
  /**
   * The model file was read but is not a valid model.
   */
  SC_STATUS_INVALID_MODEL = 4,
  SC_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Internal failure; the handle stays usable.
   */
  SC_STATUS_INTERNAL = 6,
} ScStatus;

/**
 * Opaque trained model.
 */
typedef struct ScModel ScModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
ScStatus sc_model_load(const char *path, ScModel **out);

/**
 * Loads a model from the `len` bytes of model-file JSON at `json`.
 *
 * # Safety
 * `json` must point to `len` readable bytes and `out` be a valid pointer.
 */
ScStatus sc_model_load_json(const char *json, size_t len, ScModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sc_model_free(ScModel *model);

/**
 * Number of classes; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sc_model_num_classes(const ScModel *model);

/**
 * Width of a dense concept vector; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sc_model_vocab_size(const ScModel *model);

/**
 * Number of combination weights (complementary expert plus every expert
 * block); 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sc_model_num_candidates(const ScModel *model);

/**
 * Token of class `class_index`, valid for the handle's lifetime; null if
 * the handle is null or the index is out of range.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *sc_model_class_label(const ScModel *model, size_t class_index);

/**
 * Class probabilities for a dense concept vector of `sc_model_vocab_size`
 * values, written to `out[0..num_classes]`.
 *
 * # Safety
 * `x` must point to `len` values and `out` to `out_len` writable values.
 */
ScStatus sc_model_predict_dense(const ScModel *model,
                                const double *x,
                                size_t len,
                                double *out,
                                size_t out_len);

/**
 * Class probabilities for a sparse concept vector given as `nnz` strictly
 * increasing 0-based `indices` with their `values`.
 *
 * # Safety
 * `indices` and `values` must point to `nnz` values each and `out` to
 * `out_len` writable values.
 */
ScStatus sc_model_predict_sparse(const ScModel *model,
                                 const size_t *indices,
                                 const double *values,
                                 size_t nnz,
                                 double *out,
                                 size_t out_len);

/**
 * Combination weights for a dense concept vector, written to
 * `out[0..num_candidates]` with the complementary expert first.
 *
 * # Safety
 * `x` must point to `len` values and `out` to `out_len` writable values.
 */
ScStatus sc_model_combination_weights(const ScModel *model,
                                      const double *x,
                                      size_t len,
                                      double *out,
                                      size_t out_len);

/**
 * Message of the calling thread's last failure; empty after a success.
 * Valid until the thread's next call into this library.
 */
const char *sc_last_error_message(void);

/**
 * Library version, a static string.
 */
const char *sc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPERCONE_H */
