#ifndef UGREC_H
#define UGREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UgrecEntityKind {
  UGREC_ENTITY_KIND_USER = 0,
  UGREC_ENTITY_KIND_ITEM = 1,
} UgrecEntityKind;

typedef enum UgrecStatus {
  UGREC_STATUS_OK = 0,
  UGREC_STATUS_NULL_POINTER = 1,
  UGREC_STATUS_INVALID_ARGUMENT = 2,
  UGREC_STATUS_IO = 3,
  UGREC_STATUS_PARSE = 4,
  /**
   * Checkpoint and dataset were built from different catalogs or vocabularies.
   */
  UGREC_STATUS_MISMATCH = 5,
  /**
   * Non-finite value or degenerate hyperplane normal.
   */
  UGREC_STATUS_NUMERICAL = 6,
  UGREC_STATUS_NOT_FOUND = 7,
  UGREC_STATUS_CHECKPOINT = 8,
  UGREC_STATUS_DATA = 9,
  UGREC_STATUS_PANIC = 10,
} UgrecStatus;

typedef struct UgrecDataset UgrecDataset;

typedef struct UgrecModel UgrecModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ugrec_version(void);

/**
 * Message for the last failing call on this thread, or NULL if none.
 * Valid until the next failing call on the same thread.
 */
const char *ugrec_last_error_message(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UgrecStatus ugrec_model_load(const char *path, struct UgrecModel **out);

/**
 * # Safety
 * `model` must come from [`ugrec_model_load`] and not be used afterwards. NULL is a no-op.
 */
void ugrec_model_free(struct UgrecModel *model);

/**
 * Embedding dimension, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ugrec_model_dim(const struct UgrecModel *model);

/**
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ugrec_model_entity_count(const struct UgrecModel *model);

/**
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ugrec_model_relation_count(const struct UgrecModel *model);

/**
 * Distance of `(head, tail, relation)` under the model's configured scorer.
 * Directed relations use translation; undirected ones the hyperplane (or the
 * scorer chosen at training time).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum UgrecStatus ugrec_model_distance(const struct UgrecModel *model,
                                      uint32_t head,
                                      uint32_t tail,
                                      uint32_t relation,
                                      double *out);

/**
 * Opens a prepared dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum UgrecStatus ugrec_dataset_open(const char *dir, struct UgrecDataset **out);

/**
 * # Safety
 * `data` must come from [`ugrec_dataset_open`] and not be used afterwards. NULL is a no-op.
 */
void ugrec_dataset_free(struct UgrecDataset *data);

/**
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t ugrec_dataset_entity_count(const struct UgrecDataset *data);

/**
 * Index of a user or item by name.
 *
 * # Safety
 * `data` must be a live handle, `name` NUL-terminated, `out` writable.
 */
enum UgrecStatus ugrec_dataset_lookup(const struct UgrecDataset *data,
                                      enum UgrecEntityKind kind,
                                      const char *name,
                                      uint32_t *out);

/**
 * Name of an entity, owned by the dataset handle; NULL when out of range.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
const char *ugrec_dataset_entity_name(const struct UgrecDataset *data, uint32_t id);

/**
 * Writes up to `capacity` recommendations for `user`, closest first,
 * skipping the user's training items. `*written` receives the count.
 *
 * # Safety
 * Handles must be live; `items` and `distances` must hold `capacity`
 * elements (either may be NULL when `capacity` is 0); `written` must be writable.
 */
enum UgrecStatus ugrec_recommend(const struct UgrecModel *model,
                                 const struct UgrecDataset *data,
                                 uint32_t user,
                                 size_t capacity,
                                 uint32_t *items,
                                 double *distances,
                                 size_t *written);

/**
 * Test-split HR@k and NDCG@k.
 *
 * # Safety
 * Handles must be live; `hr` and `ndcg` must be writable.
 */
enum UgrecStatus ugrec_evaluate(const struct UgrecModel *model,
                                const struct UgrecDataset *data,
                                size_t k,
                                double *hr,
                                double *ndcg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UGREC_H */
