#ifndef PPAP_H
#define PPAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PpapStatus {
  PPAP_STATUS_OK = 0,
  PPAP_STATUS_NULL_POINTER = 1,
  PPAP_STATUS_INVALID_ARGUMENT = 2,
  PPAP_STATUS_IO = 3,
  PPAP_STATUS_FORMAT = 4,
  PPAP_STATUS_DIMENSION_MISMATCH = 5,
  PPAP_STATUS_NUMERICAL = 6,
  PPAP_STATUS_MISSING_LABELS = 7,
  PPAP_STATUS_OUT_OF_RANGE = 8,
  PPAP_STATUS_PANIC = 9,
} PpapStatus;

// Opaque feature batch.
typedef struct PpapBatch PpapBatch;

// Opaque mining result.
typedef struct PpapResult PpapResult;

typedef struct PpapMiningConfig {
  double phi0;
  double psi0;
  double sigma_pos;
  double sigma_amb;
  uint32_t steps;
  double clamp_margin;
  bool normalize_proxy;
} PpapMiningConfig;

// Aggregate trust metrics; see `ppap_trust_report`.
typedef struct PpapTrust {
  size_t anchors;
  double mean_positive_count;
  double tp_in_p_ratio;
  double anchor_mean_precision;
  double mean_ambiguous_count;
  double mean_negative_count;
  double fp_in_n_ratio;
} PpapTrust;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next `ppap_*` call on the same thread.
const char *ppap_last_error(void);

// Library version as a static NUL-terminated string.
const char *ppap_version(void);

// Default mining configuration.
struct PpapMiningConfig ppap_config_default(void);

// Named preset, e.g. `"coco-vit-s16"` or `"potsdam-vit-b8"`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` writable.
enum PpapStatus ppap_config_preset(const char *name, struct PpapMiningConfig *out);

// Loads a feature container.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PpapStatus ppap_batch_load(const char *path, struct PpapBatch **out);

// Copies `rows * dim` row-major values (and optionally `rows` labels) into a
// new batch. Rows are taken as given; call `ppap_batch_normalize` for
// cosine semantics.
//
// # Safety
// `data` must hold `rows * dim` doubles, `labels` NULL or `rows` values.
enum PpapStatus ppap_batch_from_rows(const double *data,
                                     size_t rows,
                                     size_t dim,
                                     const uint32_t *labels,
                                     struct PpapBatch **out);

// # Safety
// `batch` must be a live handle, `path` a NUL-terminated string.
enum PpapStatus ppap_batch_save(const struct PpapBatch *batch, const char *path);

// New batch with every row scaled to unit length.
//
// # Safety
// `batch` must be a live handle and `out` writable.
enum PpapStatus ppap_batch_normalize(const struct PpapBatch *batch, struct PpapBatch **out);

// Row count, or 0 for NULL.
//
// # Safety
// `batch` must be NULL or a live handle.
size_t ppap_batch_rows(const struct PpapBatch *batch);

// Feature dimension, or 0 for NULL.
//
// # Safety
// `batch` must be NULL or a live handle.
size_t ppap_batch_dim(const struct PpapBatch *batch);

// # Safety
// `batch` must be NULL or a handle not yet freed.
void ppap_batch_free(struct PpapBatch *batch);

// Mines every row of `batch` with the relocating-proxy strategy.
//
// # Safety
// Handles must be live, `config` readable and `out` writable.
enum PpapStatus ppap_mine(const struct PpapBatch *batch,
                          const struct PpapMiningConfig *config,
                          struct PpapResult **out);

// Top-`k` nearest neighbours as positives.
//
// # Safety
// `batch` must be a live handle and `out` writable.
enum PpapStatus ppap_knn_mine(const struct PpapBatch *batch, size_t k, struct PpapResult **out);

// Same-cluster rows under spherical k-means as positives.
//
// # Safety
// `batch` must be a live handle and `out` writable.
enum PpapStatus ppap_kmeans_mine(const struct PpapBatch *batch,
                                 size_t clusters,
                                 uint64_t seed,
                                 struct PpapResult **out);

// Loads a result written by `ppap_result_save` or the command-line tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PpapStatus ppap_result_load(const char *path, struct PpapResult **out);

// Saves as JSON when `path` ends in `.json`, in the binary form otherwise.
//
// # Safety
// `result` must be a live handle, `path` a NUL-terminated string.
enum PpapStatus ppap_result_save(const struct PpapResult *result, const char *path);

// Number of mined anchors, or 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
size_t ppap_result_anchor_count(const struct PpapResult *result);

// Number of candidate rows, or 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
size_t ppap_result_candidates(const struct PpapResult *result);

// Row id of the `index`-th mined anchor.
//
// # Safety
// `result` must be a live handle and `out` writable.
enum PpapStatus ppap_result_anchor(const struct PpapResult *result, size_t index, uint32_t *out);

// Sorted positive rows of the `index`-th anchor. The array is owned by
// `result` and valid until it is freed.
//
// # Safety
// `result` must be a live handle; `data` and `len` writable.
enum PpapStatus ppap_result_positives(const struct PpapResult *result,
                                      size_t index,
                                      const uint32_t **data,
                                      size_t *len);

// Sorted ambiguous rows of the `index`-th anchor; ownership as for
// `ppap_result_positives`.
//
// # Safety
// `result` must be a live handle; `data` and `len` writable.
enum PpapStatus ppap_result_ambiguous(const struct PpapResult *result,
                                      size_t index,
                                      const uint32_t **data,
                                      size_t *len);

// Final positiveness and ambiguity thresholds of the `index`-th anchor.
// Fails with `PPAP_STATUS_OUT_OF_RANGE` for strategies without criteria.
//
// # Safety
// `result` must be a live handle; `phi` and `psi` writable.
enum PpapStatus ppap_result_criteria(const struct PpapResult *result,
                                     size_t index,
                                     double *phi,
                                     double *psi);

// # Safety
// `result` must be NULL or a handle not yet freed.
void ppap_result_free(struct PpapResult *result);

// Mean contrastive loss of projected rows `z` (`rows * dim`, unit length)
// under `result`; writes the gradient w.r.t. `z` when `grad` is not NULL.
//
// # Safety
// `z` must hold `rows * dim` doubles, `grad` be NULL or writable for as many.
enum PpapStatus ppap_contrastive_loss(const double *z,
                                      size_t rows,
                                      size_t dim,
                                      const struct PpapResult *result,
                                      double tau,
                                      double *loss,
                                      double *grad);

// Positive precision and negative contamination of `result`, using the
// labels carried by `labels` (indexed like the rows that were mined, or by
// original row when the result was subsampled).
//
// # Safety
// Handles must be live and `out` writable.
enum PpapStatus ppap_trust_report(const struct PpapResult *result,
                                  const struct PpapBatch *labels,
                                  struct PpapTrust *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPAP_H */
