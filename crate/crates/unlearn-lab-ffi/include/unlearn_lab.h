#ifndef UNLEARN_LAB_H
#define UNLEARN_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum UlStatus {
  UL_STATUS_OK = 0,
  UL_STATUS_NULL_POINTER = 1,
  UL_STATUS_INVALID_UTF8 = 2,
  UL_STATUS_INVALID_ARGUMENT = 3,
  UL_STATUS_PARSE_ERROR = 4,
  UL_STATUS_VALIDATION_ERROR = 5,
  UL_STATUS_IO_ERROR = 6,
  UL_STATUS_TRAINING_ERROR = 7,
  UL_STATUS_INTERNAL_ERROR = 8,
} UlStatus;

// Owned corpus behind the C boundary.
typedef struct CorpusHandle CorpusHandle;

// Owned model behind the C boundary.
typedef struct ModelHandle ModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null.
// The pointer stays valid until the next failing call on the thread.
const char *ul_last_error(void);

// Release a string returned through a `char **` out-parameter.
//
// # Safety
// `ptr` must come from this library and not have been freed already.
void ul_string_free(char *ptr);

// Library version string (static storage, do not free).
const char *ul_version(void);

// Load a JSONL corpus from disk.
//
// # Safety
// `path` must be a valid C string; `out` must be a valid pointer.
enum UlStatus ul_corpus_load(const char *path, struct CorpusHandle **out);

// Generate a synthetic corpus (test-set counts take their defaults).
//
// # Safety
// `out` must be a valid pointer.
enum UlStatus ul_corpus_synth(uint64_t n_entities,
                              uint64_t forget_per_entity,
                              uint64_t direct_per_entity,
                              uint64_t indirect_per_entity,
                              uint64_t n_general,
                              uint64_t seed,
                              struct CorpusHandle **out);

// Write a corpus as JSONL.
//
// # Safety
// `corpus` must be a live handle; `path` must be a valid C string.
enum UlStatus ul_corpus_save(const struct CorpusHandle *corpus, const char *path);

// # Safety
// `corpus` must be a live handle or null; it is invalid afterwards.
void ul_corpus_free(struct CorpusHandle *corpus);

// # Safety
// `corpus` must be a live handle.
uint64_t ul_corpus_forget_len(const struct CorpusHandle *corpus);

// # Safety
// `corpus` must be a live handle.
uint64_t ul_corpus_retain_len(const struct CorpusHandle *corpus);

// # Safety
// `corpus` must be a live handle.
uint64_t ul_corpus_test_len(const struct CorpusHandle *corpus);

// # Safety
// `corpus` must be a live handle.
uint64_t ul_corpus_entity_count(const struct CorpusHandle *corpus);

// Mean nearest-neighbor edit-distance similarity between forget and
// retain questions.
//
// # Safety
// `corpus` must be a live handle; `out` must be a valid pointer.
enum UlStatus ul_corpus_similarity_mean(const struct CorpusHandle *corpus, double *out);

// Character-level edit distance between two UTF-8 strings.
//
// # Safety
// `a` and `b` must be valid C strings; `out` must be a valid pointer.
enum UlStatus ul_levenshtein(const char *a, const char *b, uint64_t *out);

// Load a model checkpoint.
//
// # Safety
// `path` must be a valid C string; `out` must be a valid pointer.
enum UlStatus ul_model_load(const char *path, struct ModelHandle **out);

// Save a model checkpoint (deterministic bytes).
//
// # Safety
// `model` must be a live handle; `path` must be a valid C string.
enum UlStatus ul_model_save(const struct ModelHandle *model, const char *path);

// # Safety
// `model` must be a live handle or null; it is invalid afterwards.
void ul_model_free(struct ModelHandle *model);

// # Safety
// `model` must be a live handle.
uint64_t ul_model_param_count(const struct ModelHandle *model);

// Evaluate a model on a corpus; writes the aggregate report (forget
// efficacy, model utility, diversity, memorization, perplexities,
// per-entity breakdown) as a JSON string.
//
// # Safety
// `model` and `corpus` must be live handles; `out_json` must be valid.
enum UlStatus ul_model_evaluate(const struct ModelHandle *model,
                                const struct CorpusHandle *corpus,
                                uint64_t max_new_tokens,
                                char **out_json);

// Run a full experiment from an `ExperimentConfig` JSON document and return
// the run records as a JSON array. Outputs land under the config's
// `output_dir`, exactly as the CLI `run` command writes them.
//
// # Safety
// `config_json` must be a valid C string; `out_json` must be valid.
enum UlStatus ul_run_experiment(const char *config_json, char **out_json);

// Fine-tune a fresh model on the corpus (with checkpoint and baseline
// caching under the config's output directory) and hand back the trained
// model. `config_json` is an `ExperimentConfig` document.
//
// # Safety
// `corpus` must be a live handle; `config_json` a valid C string; `out` valid.
enum UlStatus ul_finetune(const struct CorpusHandle *corpus,
                          const char *config_json,
                          uint64_t run_seed,
                          struct ModelHandle **out);

// Default experiment configuration as pretty JSON, with the given corpus
// path and output directory filled in; a starting point for callers.
//
// # Safety
// `corpus_path` and `output_dir` must be valid C strings; `out_json` valid.
enum UlStatus ul_default_config(const char *corpus_path, const char *output_dir, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNLEARN_LAB_H */
