#ifndef UFO_H
#define UFO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UfoStatus {
  UFO_STATUS_OK = 0,
  UFO_STATUS_NULL_ARGUMENT = 1,
  UFO_STATUS_INVALID_UTF8 = 2,
  UFO_STATUS_INVALID_ARGUMENT = 3,
  UFO_STATUS_DIMENSION_MISMATCH = 4,
  UFO_STATUS_INVALID_TEMPLATE = 5,
  UFO_STATUS_PANIC = 6,
} UfoStatus;

/**
 * Which extraction rule produced a zero-shot answer.
 */
typedef enum UfoParseRule {
  UFO_PARSE_RULE_LEADING_LETTER = 0,
  UFO_PARSE_RULE_LETTER_WITH_DOT = 1,
  UFO_PARSE_RULE_CHOICE_TEXT_MATCH = 2,
  UFO_PARSE_RULE_UNPARSEABLE = 3,
} UfoParseRule;

/**
 * Opaque dual encoder.
 */
typedef struct UfoEncoder UfoEncoder;

/**
 * Opaque few-shot prompt template.
 */
typedef struct UfoTemplate UfoTemplate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null after a
 * success. Valid until the next call into the library from this thread.
 */
const char *ufo_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ufo_string_free(char *s);

/**
 * The bundled template.
 *
 * # Safety
 * `out_template` must be a valid pointer.
 */
enum UfoStatus ufo_template_default(struct UfoTemplate **out_template);

/**
 * Loads `head.txt`, `demos.jsonl` and `tail.txt` from `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out_template` a valid pointer.
 */
enum UfoStatus ufo_template_load(const char *dir, struct UfoTemplate **out_template);

/**
 * # Safety
 * `template` must come from a `ufo_template_*` constructor, or be null.
 */
void ufo_template_free(struct UfoTemplate *template_);

/**
 * Renders the fact-generation prompt for one question.
 *
 * # Safety
 * Pointers must be valid; `question` NUL-terminated.
 */
enum UfoStatus ufo_build_fact_prompt(const struct UfoTemplate *template_,
                                     const char *question,
                                     char **out_prompt);

/**
 * Deterministic character-trigram hashing encoder.
 *
 * # Safety
 * `out_encoder` must be a valid pointer.
 */
enum UfoStatus ufo_encoder_hashing_new(size_t dimension,
                                       uint64_t seed,
                                       struct UfoEncoder **out_encoder);

/**
 * # Safety
 * `encoder` must come from a `ufo_encoder_*` constructor, or be null.
 */
void ufo_encoder_free(struct UfoEncoder *encoder);

/**
 * Index of the fact with the largest question/fact dot product. Ties go to
 * the lowest index.
 *
 * # Safety
 * `facts` must point to `n_facts` NUL-terminated strings.
 */
enum UfoStatus ufo_select_best(const struct UfoEncoder *encoder,
                               const char *question,
                               const char *const *facts,
                               size_t n_facts,
                               size_t *out_index,
                               double *out_score);

/**
 * # Safety
 * `a` and `b` must each point to `len` doubles.
 */
enum UfoStatus ufo_dot(const double *a, const double *b, size_t len, double *out_value);

/**
 * Writes `len` probabilities to `out_probs`.
 *
 * # Safety
 * `values` and `out_probs` must each hold `len` doubles.
 */
enum UfoStatus ufo_softmax(const double *values, size_t len, double *out_probs);

/**
 * First index of the maximum.
 *
 * # Safety
 * `values` must hold `len` doubles.
 */
enum UfoStatus ufo_argmax(const double *values, size_t len, size_t *out_index);

/**
 * Extracts a choice from a free-text completion. `out_index` receives -1
 * when nothing parses.
 *
 * # Safety
 * `choices` must point to `n_choices` NUL-terminated strings.
 */
enum UfoStatus ufo_parse_zero_shot(const char *completion,
                                   const char *const *choices,
                                   size_t n_choices,
                                   int64_t *out_index,
                                   enum UfoParseRule *out_rule);

/**
 * Flat scorer input for a fact and a binary question.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_text` a valid pointer.
 */
enum UfoStatus ufo_assemble_binary(const char *fact, const char *question, char **out_text);

/**
 * Flat scorer input for a fact, question and one candidate answer.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_text` a valid pointer.
 */
enum UfoStatus ufo_assemble_choice(const char *fact,
                                   const char *question,
                                   const char *choice,
                                   char **out_text);

/**
 * Development minus test accuracy, both in percentage points.
 *
 * # Safety
 * `out_gap` must be a valid pointer.
 */
enum UfoStatus ufo_dev_test_gap(double dev_percent, double test_percent, double *out_gap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UFO_H */
