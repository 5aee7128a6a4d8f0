#ifndef SVE_H
#define SVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call. `SVE_STATUS_OK` is 0.
 */
typedef enum SveStatus {
  SVE_STATUS_OK = 0,
  SVE_STATUS_NULL_POINTER = 1,
  SVE_STATUS_INVALID_INPUT = 2,
  SVE_STATUS_NUMERIC = 3,
  SVE_STATUS_IO = 4,
  SVE_STATUS_FORMAT = 5,
  SVE_STATUS_UNSUPPORTED = 6,
  SVE_STATUS_BUFFER_TOO_SMALL = 7,
  SVE_STATUS_PANIC = 8,
} SveStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct SveModel SveModel;

/**
 * A dense SVD `w = u · diag(sigma) · vt` with `u: m×r`, `vt: r×n`.
 */
typedef struct SveSvd SveSvd;

/**
 * Scalar classification metrics of one prediction batch.
 */
typedef struct SveMetrics {
  double accuracy;
  double ece;
  double nll;
  double brier;
} SveMetrics;

/**
 * Detection metrics with in-distribution as the positive class.
 */
typedef struct SveOodMetrics {
  double auroc;
  double auprc;
  double fpr_at_95_tpr;
} SveOodMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *sve_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sve_version(void);

/**
 * Decomposes the row-major `rows × cols` matrix at `data`.
 *
 * # Safety
 * `data` is valid for `rows · cols` reads and `out` for one write.
 */
enum SveStatus sve_svd_new(const double *data, size_t rows, size_t cols, struct SveSvd **out);

/**
 * Number of singular values, `min(rows, cols)`; 0 for a null handle.
 *
 * # Safety
 * `h` is null or a live handle from [`sve_svd_new`].
 */
size_t sve_svd_rank(const struct SveSvd *h);

/**
 * Copies the descending singular values into `out[0..rank]`.
 *
 * # Safety
 * `h` is a live handle; `out` is valid for `cap` writes.
 */
enum SveStatus sve_svd_sigma(const struct SveSvd *h, double *out, size_t cap);

/**
 * Copies row-major `u` (`rows × rank`) into `out`.
 *
 * # Safety
 * `h` is a live handle; `out` is valid for `cap` writes.
 */
enum SveStatus sve_svd_u(const struct SveSvd *h, double *out, size_t cap);

/**
 * Copies row-major `vt` (`rank × cols`) into `out`.
 *
 * # Safety
 * `h` is a live handle; `out` is valid for `cap` writes.
 */
enum SveStatus sve_svd_vt(const struct SveSvd *h, double *out, size_t cap);

/**
 * Releases an SVD handle; null is a no-op.
 *
 * # Safety
 * `h` is null or a live handle not used afterwards.
 */
void sve_svd_free(struct SveSvd *h);

/**
 * Loads a checkpoint written by the `sve` CLI. The prediction mode
 * (plain or MC dropout) follows the training config stored with it.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` valid for one write.
 */
enum SveStatus sve_model_load(const char *path, struct SveModel **out);

/**
 * Input feature count; 0 for a null handle.
 *
 * # Safety
 * `h` is null or a live model handle.
 */
size_t sve_model_input_dim(const struct SveModel *h);

/**
 * Class count; 0 for a null handle.
 *
 * # Safety
 * `h` is null or a live model handle.
 */
size_t sve_model_n_classes(const struct SveModel *h);

/**
 * Ensemble member count; 0 for a null handle.
 *
 * # Safety
 * `h` is null or a live model handle.
 */
size_t sve_model_n_members(const struct SveModel *h);

/**
 * Writes the row-major `rows × n_classes` ensemble-mean probabilities of
 * the row-major `rows × input_dim` batch `x`. `seed` only matters for MC
 * dropout models; equal seeds give bit-identical output.
 *
 * # Safety
 * `h` is a live model handle, `x` valid for `rows · cols` reads and `out`
 * for `cap` writes.
 */
enum SveStatus sve_model_predict(const struct SveModel *h,
                                 const double *x,
                                 size_t rows,
                                 size_t cols,
                                 uint64_t seed,
                                 double *out,
                                 size_t cap);

/**
 * Releases a model handle; null is a no-op.
 *
 * # Safety
 * `h` is null or a live handle not used afterwards.
 */
void sve_model_free(struct SveModel *h);

/**
 * Accuracy, 15-bin ECE, NLL and Brier score of row-major `rows × cols`
 * probabilities against `labels[0..rows]`.
 *
 * # Safety
 * `probs` is valid for `rows · cols` reads, `labels` for `rows` reads and
 * `out` for one write.
 */
enum SveStatus sve_metrics_compute(const double *probs,
                                   size_t rows,
                                   size_t cols,
                                   const size_t *labels,
                                   struct SveMetrics *out);

/**
 * AUROC, AUPRC and FPR at 95% TPR for confidence scores, with higher
 * scores meaning more in-distribution.
 *
 * # Safety
 * `in_dist` is valid for `n_in` reads, `ood` for `n_ood` reads and `out`
 * for one write.
 */
enum SveStatus sve_ood_metrics(const double *in_dist,
                               size_t n_in,
                               const double *ood,
                               size_t n_ood,
                               struct SveOodMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVE_H */
