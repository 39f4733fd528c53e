#ifndef NETLANG_H
#define NETLANG_H

/* Generated by cbindgen from netlang-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum NlStatus {
  NL_STATUS_OK = 0,
  NL_STATUS_NULL_ARGUMENT = 1,
  NL_STATUS_UTF8 = 2,
  NL_STATUS_JSON = 3,
  NL_STATUS_INVALID_GRAMMAR = 4,
  NL_STATUS_UNPARSEABLE = 5,
  NL_STATUS_DOMAIN = 6,
} NlStatus;

typedef struct NlGrammar NlGrammar;

typedef struct NlStcAog NlStcAog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *nl_version(void);

// Last error message on this thread, or null. Caller frees with
// `nl_string_free`.
char *nl_last_error(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be a pointer previously returned by a string-returning
// function of this library, not yet freed.
void nl_string_free(char *s);

// Parses a grammar from canonical JSON into a new handle.
//
// # Safety
// `json` must be a valid NUL-terminated string; `out` must be a valid
// pointer to receive the handle.
enum NlStatus nl_grammar_from_json(const char *json, struct NlGrammar **out);

// # Safety
// `g` must be a handle from `nl_grammar_from_json`, not yet freed.
void nl_grammar_free(struct NlGrammar *g);

// Canonical JSON of the grammar. Caller frees.
//
// # Safety
// `g` must be a live grammar handle.
char *nl_grammar_to_json(const struct NlGrammar *g);

// Validation report as a JSON array of strings (empty when valid).
// Caller frees.
//
// # Safety
// `g` must be a live grammar handle.
char *nl_grammar_validate(const struct NlGrammar *g);

// Non-terminals plus terminals reachable from the start symbol.
//
// # Safety
// `g` must be a live grammar handle.
uint64_t nl_grammar_node_count(const struct NlGrammar *g);

// Seeded derivation: the terminal frontier as a space-joined string.
// Caller frees; null on invalid grammars.
//
// # Safety
// `g` must be a live grammar handle.
char *nl_grammar_sample(const struct NlGrammar *g, uint64_t seed);

// DOT text of the grammar. Caller frees; null on invalid grammars.
//
// # Safety
// `g` must be a live grammar handle.
char *nl_grammar_to_dot(const struct NlGrammar *g);

// Parses a fused STC-AOG from JSON into a new handle.
//
// # Safety
// `json` must be a valid NUL-terminated string; `out` must be a valid
// pointer to receive the handle.
enum NlStatus nl_stc_from_json(const char *json, struct NlStcAog **out);

// # Safety
// `aog` must be a handle from `nl_stc_from_json`, not yet freed.
void nl_stc_free(struct NlStcAog *aog);

// # Safety
// `aog` must be a live handle.
char *nl_stc_to_json(const struct NlStcAog *aog);

// Viterbi interpretation of one trace (JSON in, parse-graph JSON out).
// Caller frees; null with `nl_last_error` set on failures.
//
// # Safety
// `aog` must be a live handle and `trace_json` a valid string.
char *nl_stc_parse_trace(const struct NlStcAog *aog, const char *trace_json);

// Numbered first-order-logic description of the whole grammar.
// Caller frees.
//
// # Safety
// `aog` must be a live handle.
char *nl_stc_describe(const struct NlStcAog *aog);

// Numbered description of one parse graph (JSON in). Caller frees.
//
// # Safety
// `aog` must be a live handle and `pg_json` a valid string.
char *nl_stc_describe_pg(const struct NlStcAog *aog, const char *pg_json);

// Runs the offload simulator (config JSON or null for defaults) and
// returns the trace corpus as JSONL. Caller frees.
//
// # Safety
// `config_json` must be null or a valid NUL-terminated string.
char *nl_simulate(const char *config_json);

// Induces one layer grammar (`layer` 0 = spatial, 1 = temporal) from
// JSONL traces. On success writes the grammar JSON to `out_grammar`
// and the iteration log CSV to `out_log` (either may be null to skip).
//
// # Safety
// `traces_jsonl` must be a valid string; `config_json` null or valid;
// the out pointers null or valid to receive allocations.
enum NlStatus nl_induce(const char *traces_jsonl,
                        int32_t layer,
                        const char *config_json,
                        char **out_grammar,
                        char **out_log);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETLANG_H */
