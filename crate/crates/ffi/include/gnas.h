#ifndef GNAS_H
#define GNAS_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GnasStatus {
  GNAS_STATUS_OK = 0,
  GNAS_STATUS_NULL_POINTER = 1,
  GNAS_STATUS_INVALID_UTF8 = 2,
  GNAS_STATUS_INVALID_ARGUMENT = 3,
  GNAS_STATUS_IO = 4,
  GNAS_STATUS_PARSE = 5,
  GNAS_STATUS_CONFIG = 6,
  GNAS_STATUS_METRIC = 7,
  GNAS_STATUS_OUT_OF_SCOPE = 8,
  GNAS_STATUS_INTERNAL = 9,
} GnasStatus;

/**
 * Split selector for [`gnas_model_evaluate`].
 */
typedef enum GnasSplit {
  GNAS_SPLIT_TRAIN = 0,
  GNAS_SPLIT_VALID = 1,
  GNAS_SPLIT_TEST = 2,
} GnasSplit;

typedef struct GnasArch GnasArch;

typedef struct GnasDataset GnasDataset;

/**
 * A trained discrete network together with the settings it was trained with.
 */
typedef struct GnasModel GnasModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *gnas_last_error(void);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void gnas_string_free(char *s);

/**
 * Load a JSONL graph file and its splits. `task_json` is e.g.
 * `{"type":"binary"}`.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out` must be writable.
 */
enum GnasStatus gnas_dataset_load(const char *graphs_path,
                                  const char *splits_path,
                                  const char *task_json,
                                  struct GnasDataset **out);

/**
 * Generate a synthetic dataset. A null `spec_json` gives the default
 * triangle task with 500 graphs.
 *
 * # Safety
 * `spec_json` must be null or a valid string; `out` must be writable.
 */
enum GnasStatus gnas_dataset_synthetic(const char *spec_json,
                                       uint64_t seed,
                                       struct GnasDataset **out);

/**
 * Number of graphs, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t gnas_dataset_len(const struct GnasDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle not freed before.
 */
void gnas_dataset_free(struct GnasDataset *ds);

/**
 * Parse and validate an architecture encoding.
 *
 * # Safety
 * `json` must be a valid string; `out` must be writable.
 */
enum GnasStatus gnas_arch_from_json(const char *json, struct GnasArch **out);

/**
 * Serialize an architecture; free the result with [`gnas_string_free`].
 *
 * # Safety
 * `arch` must be a live handle; `out` must be writable.
 */
enum GnasStatus gnas_arch_to_json(const struct GnasArch *arch, char **out);

/**
 * # Safety
 * `arch` must be null or a live handle not freed before.
 */
void gnas_arch_free(struct GnasArch *arch);

/**
 * Run the architecture search. `config_json` holds search settings; null
 * uses the defaults.
 *
 * # Safety
 * `ds` must be live; `config_json` null or valid; `out` writable.
 */
enum GnasStatus gnas_search(const struct GnasDataset *ds,
                            const char *config_json,
                            struct GnasArch **out);

/**
 * Train `arch` from scratch. `hparams_json` null uses the defaults.
 *
 * # Safety
 * Handles must be live; `hparams_json` null or valid; `out` writable.
 */
enum GnasStatus gnas_train(const struct GnasArch *arch,
                           const struct GnasDataset *ds,
                           const char *hparams_json,
                           struct GnasModel **out);

/**
 * Score a trained model on one split of `ds` with the model's metric.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum GnasStatus gnas_model_evaluate(const struct GnasModel *model,
                                    const struct GnasDataset *ds,
                                    enum GnasSplit split,
                                    double *out);

/**
 * Train/valid/test reports from training as a JSON array.
 *
 * # Safety
 * `model` must be live; `out` must be writable.
 */
enum GnasStatus gnas_model_report_json(const struct GnasModel *model, char **out);

/**
 * # Safety
 * `model` must be null or a live handle not freed before.
 */
void gnas_model_free(struct GnasModel *model);

/**
 * Temperature softmax of `alpha[0..len]` into `out[0..len]`.
 *
 * # Safety
 * `alpha` and `out` must point to `len` valid `double`s.
 */
enum GnasStatus gnas_arch_weights(const double *alpha, size_t len, double lambda, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GNAS_H */
