#ifndef BIASREL_H
#define BIASREL_H

/* Generated by cbindgen from the biasrel-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BiasrelStatus {
  BIASREL_STATUS_OK = 0,
  BIASREL_STATUS_NULL_POINTER = 1,
  BIASREL_STATUS_INVALID_ARGUMENT = 2,
  BIASREL_STATUS_IO = 3,
  BIASREL_STATUS_PARSE = 4,
  BIASREL_STATUS_MISSING_WORD = 5,
  BIASREL_STATUS_DEGENERATE = 6,
  BIASREL_STATUS_COLLINEAR = 7,
  BIASREL_STATUS_CONFIG = 8,
  BIASREL_STATUS_PANIC = 9,
} BiasrelStatus;

/**
 * Opaque embedding model.
 */
typedef struct BiasrelModel BiasrelModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The
 * pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *biasrel_last_error(void);

/**
 * ICC(2,1) of a row-major `n_rows x n_cols` matrix. Degenerate matrices
 * give NaN and set `*out_degenerate` (which may be null).
 *
 * # Safety
 * `values` must point to `n_rows * n_cols` doubles; out pointers must be
 * valid for writes.
 */
enum BiasrelStatus biasrel_icc21(const double *values,
                                 size_t n_rows,
                                 size_t n_cols,
                                 double *out_value,
                                 bool *out_degenerate);

/**
 * ICC(3,1); same conventions as [`biasrel_icc21`].
 *
 * # Safety
 * See [`biasrel_icc21`].
 */
enum BiasrelStatus biasrel_icc31(const double *values,
                                 size_t n_rows,
                                 size_t n_cols,
                                 double *out_value,
                                 bool *out_degenerate);

/**
 * Cronbach's alpha with columns as items; same conventions as
 * [`biasrel_icc21`].
 *
 * # Safety
 * See [`biasrel_icc21`].
 */
enum BiasrelStatus biasrel_cronbach_alpha(const double *values,
                                          size_t n_rows,
                                          size_t n_cols,
                                          double *out_value,
                                          bool *out_degenerate);

/**
 * Loads a word2vec or GloVe text file (format detected from the header).
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be valid for writes.
 */
enum BiasrelStatus biasrel_model_load(const char *path, struct BiasrelModel **out);

/**
 * Releases a model. Null is accepted.
 *
 * # Safety
 * `model` must come from [`biasrel_model_load`] and not be used afterwards.
 */
void biasrel_model_free(struct BiasrelModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be valid for writes.
 */
enum BiasrelStatus biasrel_model_vocab_size(const struct BiasrelModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle; `out` must be valid for writes.
 */
enum BiasrelStatus biasrel_model_dim(const struct BiasrelModel *model, size_t *out);

/**
 * Cosine-difference score `cos(w, m) - cos(w, f)`.
 *
 * # Safety
 * String arguments must be nul-terminated; `model` must be live.
 */
enum BiasrelStatus biasrel_score_dbwa(const struct BiasrelModel *model,
                                      const char *word,
                                      const char *male,
                                      const char *female,
                                      double *out);

/**
 * Projection of `w` on the normalized difference `m - f`.
 *
 * # Safety
 * See [`biasrel_score_dbwa`].
 */
enum BiasrelStatus biasrel_score_ripa(const struct BiasrelModel *model,
                                      const char *word,
                                      const char *male,
                                      const char *female,
                                      double *out);

/**
 * Signed fraction of the `k` nearest neighbours of `word` that lean male.
 *
 * # Safety
 * See [`biasrel_score_dbwa`].
 */
enum BiasrelStatus biasrel_score_nbm(const struct BiasrelModel *model,
                                     const char *word,
                                     const char *male,
                                     const char *female,
                                     size_t k,
                                     double *out);

/**
 * Orthogonal `Q` (row-major `dim x dim`) minimizing
 * `||w_ref - w_other Q||_F` for row-major `rows x dim` inputs.
 *
 * # Safety
 * Inputs must hold `rows * dim` doubles and `q_out` room for `dim * dim`.
 */
enum BiasrelStatus biasrel_procrustes(const double *w_ref,
                                      const double *w_other,
                                      size_t rows,
                                      size_t dim,
                                      double *q_out);

/**
 * Runs the full pipeline for a TOML config file.
 *
 * # Safety
 * `config_path` must be a nul-terminated string.
 */
enum BiasrelStatus biasrel_run_config(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIASREL_H */
