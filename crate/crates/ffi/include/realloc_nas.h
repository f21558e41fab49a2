#ifndef REALLOC_NAS_H
#define REALLOC_NAS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RnStatus {
  RN_STATUS_OK = 0,
  /**
   * Null pointer, non-UTF-8 string or out-of-range parameter.
   */
  RN_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Code text could not be parsed.
   */
  RN_STATUS_PARSE = 2,
  /**
   * A code or family violates its invariants.
   */
  RN_STATUS_VALIDATION = 3,
  /**
   * No stage code meets the budget.
   */
  RN_STATUS_NO_CANDIDATES = 4,
  /**
   * Brute force was asked for more candidates than allowed.
   */
  RN_STATUS_SPACE_TOO_LARGE = 5,
  /**
   * The evaluator cannot score a requested architecture.
   */
  RN_STATUS_EVALUATOR = 6,
  RN_STATUS_IO = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  RN_STATUS_PANIC = 8,
} RnStatus;

/**
 * Evaluator handle.
 */
typedef struct RnEvaluator RnEvaluator;

/**
 * Backbone family handle.
 */
typedef struct RnFamily RnFamily;

/**
 * Finished search run.
 */
typedef struct RnReport RnReport;

/**
 * Allocation space handle.
 */
typedef struct RnSpace RnSpace;

/**
 * Search settings. Obtain defaults from [`rn_search_config_default`].
 */
typedef struct RnSearchConfig {
  uint32_t beam_width;
  /**
   * Sampled completions per partial code; 0 means every completion.
   */
  uint32_t completions;
  uint64_t seed;
  uint32_t workers;
  bool paired_sampling;
  uint64_t max_candidates;
} RnSearchConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *rn_last_error(void);

/**
 * Library version as a static string.
 */
const char *rn_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string from a `char **` out-parameter of this
 * library that has not been freed yet.
 */
void rn_string_free(char *s);

/**
 * Looks up a built-in family: `resnet_basic`, `resnet_bottleneck`,
 * `resnext` or `mobilenetv2`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum RnStatus rn_family_builtin(const char *name, struct RnFamily **out);

/**
 * # Safety
 * `family` must be NULL or a live handle.
 */
void rn_family_free(struct RnFamily *family);

/**
 * Number of searchable stages.
 *
 * # Safety
 * `family` must be a live handle.
 */
enum RnStatus rn_family_num_stages(const struct RnFamily *family, uint32_t *out);

/**
 * Parses and validates `[stage code] / [op code]` (or a bare stage code)
 * and writes the canonical text to `*normalized`.
 *
 * # Safety
 * `family` must be a live handle, `text` NUL-terminated, `normalized` writable.
 */
enum RnStatus rn_parse_codes(const struct RnFamily *family, const char *text, char **normalized);

/**
 * Relative backbone cost of a code under `fixed_overhead + ref_cost * weighted blocks`.
 *
 * # Safety
 * `family` must be a live handle, `text` NUL-terminated, `cost` writable.
 */
enum RnStatus rn_cost(const struct RnFamily *family,
                      const char *text,
                      double ref_cost,
                      double fixed_overhead,
                      double *cost);

/**
 * Theoretical receptive field at the output of searchable stage `stage`
 * (1-based; 0 is the stem).
 *
 * # Safety
 * `family` must be a live handle, `text` NUL-terminated, `trf` writable.
 */
enum RnStatus rn_theoretical_rf(const struct RnFamily *family,
                                const char *text,
                                uint32_t stage,
                                uint64_t *trf);

/**
 * Space of stage codes with the family's default branch sets and weighted
 * block count within `tolerance` of `budget`, both given as fractions.
 *
 * # Safety
 * `family` must be a live handle and `out` writable.
 */
enum RnStatus rn_space_new(const struct RnFamily *family,
                           int64_t budget_num,
                           int64_t budget_den,
                           int64_t tolerance_num,
                           int64_t tolerance_den,
                           struct RnSpace **out);

/**
 * # Safety
 * `space` must be NULL or a live handle.
 */
void rn_space_free(struct RnSpace *space);

/**
 * Number of stage codes in the space.
 *
 * # Safety
 * `space` must be a live handle and `count` writable.
 */
enum RnStatus rn_space_count(const struct RnSpace *space, uint64_t *count);

/**
 * All stage codes, one per line in lexicographic order.
 *
 * # Safety
 * `space` must be a live handle and `codes` writable.
 */
enum RnStatus rn_space_codes(const struct RnSpace *space, char **codes);

/**
 * Evaluator that scores every architecture `base`.
 *
 * # Safety
 * `family` must be a live handle and `out` writable.
 */
enum RnStatus rn_evaluator_constant(const struct RnFamily *family,
                                    double base,
                                    struct RnEvaluator **out);

/**
 * The built-in hand-shaped surrogate evaluator.
 *
 * # Safety
 * `family` must be a live handle and `out` writable.
 */
enum RnStatus rn_evaluator_surrogate(const struct RnFamily *family, struct RnEvaluator **out);

/**
 * Score table read from a `code<TAB>score` file.
 *
 * # Safety
 * `family` must be a live handle, `path` NUL-terminated, `out` writable.
 */
enum RnStatus rn_evaluator_table(const struct RnFamily *family,
                                 const char *path,
                                 struct RnEvaluator **out);

/**
 * A copy of `inner` with Gaussian noise of standard deviation `stddev`
 * added to every evaluation. `inner` stays owned by the caller.
 *
 * # Safety
 * `inner` must be a live handle and `out` writable.
 */
enum RnStatus rn_evaluator_noisy(const struct RnEvaluator *inner,
                                 double stddev,
                                 struct RnEvaluator **out);

/**
 * # Safety
 * `evaluator` must be NULL or a live handle.
 */
void rn_evaluator_free(struct RnEvaluator *evaluator);

/**
 * Default search settings.
 */
struct RnSearchConfig rn_search_config_default(void);

/**
 * Search over a space. `kind` is 0 for stage search, 1 for hierarchical
 * (stage then operation) search. `config` may be NULL for defaults.
 *
 * # Safety
 * Handles must be live, `config` NULL or readable, `out` writable.
 */
enum RnStatus rn_search_space(const struct RnSpace *space,
                              const struct RnEvaluator *evaluator,
                              const struct RnSearchConfig *config,
                              uint32_t kind,
                              struct RnReport **out);

/**
 * Operation search for a fixed stage code. `kind` is 0 for greedy beam
 * search, 1 for brute force. `stage` is the searchable or full stage code.
 *
 * # Safety
 * Handles must be live, `stage` NUL-terminated, `config` NULL or readable,
 * `out` writable.
 */
enum RnStatus rn_search_ops(const struct RnFamily *family,
                            const char *stage,
                            const struct RnEvaluator *evaluator,
                            const struct RnSearchConfig *config,
                            uint32_t kind,
                            struct RnReport **out);

/**
 * Continues a greedy operation search from a checkpoint file.
 *
 * # Safety
 * Handles must be live, `checkpoint` NUL-terminated, `config` NULL or
 * readable, `out` writable.
 */
enum RnStatus rn_search_ops_resume(const struct RnFamily *family,
                                   const char *checkpoint,
                                   const struct RnEvaluator *evaluator,
                                   const struct RnSearchConfig *config,
                                   struct RnReport **out);

/**
 * # Safety
 * `report` must be NULL or a live handle.
 */
void rn_report_free(struct RnReport *report);

/**
 * Winning architecture as `[stage code] / [op code]` and its score.
 *
 * # Safety
 * `report` must be a live handle; `code` and `score` writable.
 */
enum RnStatus rn_report_winner(const struct RnReport *report, char **code, double *score);

/**
 * The full report in the key-tree text format.
 *
 * # Safety
 * `report` must be a live handle and `text` writable.
 */
enum RnStatus rn_report_text(const struct RnReport *report, char **text);

/**
 * Writes the report atomically to `path`.
 *
 * # Safety
 * `report` must be a live handle and `path` NUL-terminated.
 */
enum RnStatus rn_report_write(const struct RnReport *report, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REALLOC_NAS_H */
