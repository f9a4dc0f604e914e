#ifndef ASPECTCUE_H
#define ASPECTCUE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Passed as `k` to [`ac_render`] to include every demonstration.
 */
#define AC_ALL_DEMOS -1

typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_POINTER = 1,
  AC_STATUS_INVALID_UTF8 = 2,
  AC_STATUS_INVALID_ARGUMENT = 3,
  AC_STATUS_PARSE = 4,
  AC_STATUS_IO = 5,
  AC_STATUS_DEGENERATE = 6,
  AC_STATUS_CAPACITY = 7,
  AC_STATUS_PANIC = 99,
} AcStatus;

typedef enum AcPromptMode {
  AC_PROMPT_MODE_VANILLA = 0,
  AC_PROMPT_MODE_COT = 1,
  AC_PROMPT_MODE_MAC = 2,
} AcPromptMode;

typedef enum AcFrequencyBand {
  AC_FREQUENCY_BAND_RARE = 0,
  AC_FREQUENCY_BAND_LESS_FREQUENT = 1,
  AC_FREQUENCY_BAND_FREQUENT = 2,
  AC_FREQUENCY_BAND_HIGHLY_FREQUENT = 3,
} AcFrequencyBand;

/*
 Opaque knowledge base handle.
 */
typedef struct AcKnowledgeBase AcKnowledgeBase;

/*
 Opaque prompt template handle, including its demonstrations.
 */
typedef struct AcTemplate AcTemplate;

typedef struct AcScores {
  double accuracy;
  double macro_f1;
  double weighted_f1;
} AcScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after success.
 The pointer stays valid until the next call on this thread.
 */
const char *ac_last_error_message(void);

/*
 Library version as a static string.
 */
const char *ac_version(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not have been freed already.
 */
void ac_string_free(char *s);

/*
 Loads a knowledge base file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AcStatus ac_kb_load(const char *path, struct AcKnowledgeBase **out);

/*
 Parses a knowledge base from JSON text.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AcStatus ac_kb_parse(const char *json, struct AcKnowledgeBase **out);

/*
 # Safety
 `kb` must be null or a handle from `ac_kb_load`/`ac_kb_parse` not yet freed.
 */
void ac_kb_free(struct AcKnowledgeBase *kb);

/*
 Extracts aspects from `text` and writes the bindings as JSON.

 # Safety
 `kb` must be a live handle, `text` a NUL-terminated string, `out_json`
 writable.
 */
enum AcStatus ac_extract(const struct AcKnowledgeBase *kb, const char *text, char **out_json);

/*
 Loads a prompt template file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AcStatus ac_template_load(const char *path, struct AcTemplate **out);

/*
 Parses a prompt template from JSON text.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AcStatus ac_template_parse(const char *json, struct AcTemplate **out);

/*
 # Safety
 `t` must be null or a template handle not yet freed.
 */
void ac_template_free(struct AcTemplate *t);

/*
 Number of demonstrations bundled with the template; 0 for null.

 # Safety
 `t` must be null or a live template handle.
 */
size_t ac_template_demo_count(const struct AcTemplate *t);

/*
 Renders the prompt for `item_text` with the first `k` demonstrations
 (`AC_ALL_DEMOS` for all). `bindings_json` may be null for empty
 bindings.

 # Safety
 Pointers must be valid as documented; `out_prompt` writable.
 */
enum AcStatus ac_render(const struct AcTemplate *t,
                        const char *item_text,
                        const char *bindings_json,
                        enum AcPromptMode mode,
                        int64_t k,
                        char **out_prompt);

/*
 Parses the answer out of a completion with the template's output
 contract and writes the label as JSON (`3` or `"positive"`).

 # Safety
 Pointers must be valid as documented; `out_label_json` writable.
 */
enum AcStatus ac_parse_output(const struct AcTemplate *t,
                              const char *completion,
                              char **out_label_json);

/*
 Exact Shapley values of the game whose value for coalition bitmask `s`
 is `values[s]`. `n_values` must be `2^n_players`; `out_phi` receives
 `n_players` doubles.

 # Safety
 `values` must hold `n_values` doubles and `out_phi` room for `n_players`.
 */
enum AcStatus ac_shapley_exact(const double *values,
                               size_t n_values,
                               uint32_t n_players,
                               double *out_phi);

/*
 Permutation-sampled Shapley values over a value table, with standard
 errors. Deterministic for a fixed `seed`.

 # Safety
 `values` must hold `n_values` doubles; `out_phi` and `out_stderr` room
 for `n_players` doubles each.
 */
enum AcStatus ac_shapley_sampled(const double *values,
                                 size_t n_values,
                                 uint32_t n_players,
                                 size_t permutations,
                                 uint64_t seed,
                                 double *out_phi,
                                 double *out_stderr);

/*
 Frequency band for an entity's corpus occurrence count.
 */
enum AcFrequencyBand ac_categorize_frequency(uint64_t count);

/*
 Fleiss' kappa for a row-major `n_items x n_categories` count matrix.

 # Safety
 `counts` must hold `n_items * n_categories` values; `out` writable.
 */
enum AcStatus ac_fleiss_kappa(const uint32_t *counts,
                              size_t n_items,
                              size_t n_categories,
                              double *out);

/*
 Classification scores over integer labels (see [`AcScores`]). `pred_valid`
 may be null; otherwise a zero entry marks an unparseable prediction,
 which counts as wrong.

 # Safety
 `preds`, `golds` (and `pred_valid` when non-null) must hold `n`
 elements; `out` writable.
 */
enum AcStatus ac_classification_scores(const int64_t *preds,
                                       const uint8_t *pred_valid,
                                       const int64_t *golds,
                                       size_t n,
                                       struct AcScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASPECTCUE_H */
