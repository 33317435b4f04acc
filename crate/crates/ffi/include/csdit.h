#ifndef CSDIT_H
#define CSDIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  CSDIT_STATUS_OK = 0,
  CSDIT_STATUS_NULL_POINTER = 1,
  CSDIT_STATUS_INVALID_ARGUMENT = 2,
  CSDIT_STATUS_SHAPE_MISMATCH = 3,
  CSDIT_STATUS_STRUCTURAL = 4,
  CSDIT_STATUS_OVERFLOW = 5,
  CSDIT_STATUS_IO = 6,
  CSDIT_STATUS_PANIC = 7,
} CsditStatus;

typedef enum {
  CSDIT_MODE_FULL = 0,
  CSDIT_MODE_SPARSE = 1,
  CSDIT_MODE_CAUSAL_SPARSE = 2,
} CsditMode;

typedef enum {
  CSDIT_PRECISION_F32 = 0,
  CSDIT_PRECISION_F64 = 1,
} CsditPrecision;

/**
 * Opaque reference key/value cache, tied to the model that produced it.
 */
typedef struct CsditCache CsditCache;

/**
 * Opaque model handle.
 */
typedef struct CsditModel CsditModel;

/**
 * Attention score-matrix entries over a run, split by query/key block.
 */
typedef struct {
  uint64_t noise_self;
  uint64_t noise_ref;
  uint64_t ref_self;
  uint64_t total;
} CsditFlops;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one, or 0 when
 * there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t csdit_last_error_message(char *buf, size_t len);

/**
 * Analytic attention cost over `steps` denoising steps.
 *
 * # Safety
 * `out` must be valid for one write.
 */
CsditStatus csdit_count_flops(size_t noise_len,
                              size_t ref_len,
                              size_t n_refs,
                              CsditMode attention,
                              uint64_t steps,
                              CsditFlops *out);

/**
 * Allowed query/key pairs of one attention map, split by query block.
 *
 * # Safety
 * `noise_queries` and `reference_queries` must be valid for one write.
 */
CsditStatus csdit_mask_pair_counts(size_t noise_len,
                                   size_t ref_len,
                                   size_t n_refs,
                                   CsditMode attention,
                                   uint64_t *noise_queries,
                                   uint64_t *reference_queries);

/**
 * Token-level model: inputs are already embedded `dim`-wide tokens, output
 * is three noise channels per token. `*out` receives a handle to free with
 * [`csdit_model_free`].
 *
 * # Safety
 * `out` must be valid for one write.
 */
CsditStatus csdit_model_new(size_t depth,
                            size_t dim,
                            size_t heads,
                            uint64_t seed,
                            CsditPrecision precision,
                            CsditModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`csdit_model_new`] not yet freed.
 */
void csdit_model_free(CsditModel *model);

/**
 * Values per output token.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t csdit_model_output_features(const CsditModel *model);

/**
 * Runs the references through every block once at timestep 0.
 * `ref_tokens` holds `n_refs * ref_len * dim` values.
 *
 * # Safety
 * `model` must be a live handle, `ref_tokens` valid for the stated length,
 * `out` valid for one write.
 */
CsditStatus csdit_reference_pass(const CsditModel *model,
                                 const double *ref_tokens,
                                 size_t n_refs,
                                 size_t ref_len,
                                 size_t noise_len,
                                 CsditCache **out);

/**
 * # Safety
 * `cache` must be null or a handle from [`csdit_reference_pass`] not yet freed.
 */
void csdit_cache_free(CsditCache *cache);

/**
 * Noise prediction for `noise_len * dim` noise tokens at `timestep`,
 * attending to the cached references. Writes `noise_len` times
 * [`csdit_model_output_features`] values to `out`.
 *
 * # Safety
 * Handles must be live and from the same model; buffers valid for the
 * stated lengths.
 */
CsditStatus csdit_predict_noise(const CsditModel *model,
                                const CsditCache *cache,
                                const double *noise_tokens,
                                size_t noise_len,
                                size_t timestep,
                                double *out);

/**
 * PSNR in dB over interleaved RGB in `[0, 1]`; identical images give the cap.
 *
 * # Safety
 * `a`, `b` valid for `height * width * 3` reads; `out` for one write.
 */
CsditStatus csdit_psnr(const float *a, const float *b, size_t height, size_t width, double *out);

/**
 * Mean SSIM over interleaved RGB in `[0, 1]`.
 *
 * # Safety
 * `a`, `b` valid for `height * width * 3` reads; `out` for one write.
 */
CsditStatus csdit_ssim(const float *a, const float *b, size_t height, size_t width, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSDIT_H */
