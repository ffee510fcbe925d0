/* C interface to the hcsim hypercube join analysis library. */

#ifndef HCSIM_H
#define HCSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call. `HCSIM_STATUS_OK` is zero; any
// other value leaves out-parameters untouched and stores a message
// retrievable with `hcsim_last_error`.
typedef enum HcsimStatus {
  HCSIM_STATUS_OK = 0,
  // A required pointer argument was NULL.
  HCSIM_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  HCSIM_STATUS_INVALID_UTF8 = 2,
  HCSIM_STATUS_PARSE = 3,
  HCSIM_STATUS_INVALID_QUERY = 4,
  HCSIM_STATUS_INVALID_WEIGHTING = 5,
  HCSIM_STATUS_ARITY_MISMATCH = 6,
  HCSIM_STATUS_UNKNOWN_RELATION = 7,
  HCSIM_STATUS_DOMAIN_VIOLATION = 8,
  HCSIM_STATUS_ENUMERATION_TOO_LARGE = 9,
  HCSIM_STATUS_LP_INFEASIBLE = 10,
  HCSIM_STATUS_LP_UNBOUNDED = 11,
  HCSIM_STATUS_INVALID_ARGUMENT = 12,
  HCSIM_STATUS_CANNOT_REACH_DISTINCT = 13,
  HCSIM_STATUS_ORACLE_GUARD_EXCEEDED = 14,
  HCSIM_STATUS_PROCESSED_SET_OVERFLOW = 15,
  HCSIM_STATUS_ALGORITHM_SHAPE = 16,
  HCSIM_STATUS_REPLICATION_NOT_APPLICABLE = 17,
  HCSIM_STATUS_IO = 18,
  HCSIM_STATUS_JSON = 19,
  // An internal invariant failed; the library caught a panic.
  HCSIM_STATUS_INTERNAL = 20,
} HcsimStatus;

// A parsed conjunctive query. Opaque.
typedef struct HcsimQuery HcsimQuery;

// A solved share plan for one (query, sizes, p) triple. Opaque.
typedef struct HcsimSharePlan HcsimSharePlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// ABI revision of this header. Bump on any breaking change.
uint32_t hcsim_abi_version(void);

// Message of the most recent failure on this thread. The pointer stays
// valid until the next failing hcsim call on the same thread. Never
// NULL; empty if nothing failed yet.
const char *hcsim_last_error(void);

// Releases a string returned by any hcsim function. NULL is ignored.
void hcsim_string_free(char *s);

// Parses `Q(x, y) :- S1(x), S2(x, y)` syntax into a query handle.
enum HcsimStatus hcsim_query_parse(const char *text, struct HcsimQuery **out);

// Releases a query handle. NULL is ignored.
void hcsim_query_free(struct HcsimQuery *q);

// Number of variables of the query; 0 if the handle is NULL.
size_t hcsim_query_num_vars(const struct HcsimQuery *q);

// Number of atoms of the query; 0 if the handle is NULL.
size_t hcsim_query_num_atoms(const struct HcsimQuery *q);

// Canonical text of the query. Free the result with hcsim_string_free.
enum HcsimStatus hcsim_query_render(const struct HcsimQuery *q, char **out);

// Solves the share LP for relation sizes `sizes[0..len]` (one
// per atom, in body order, any fixed unit) and `p` servers.
enum HcsimStatus hcsim_share_plan_solve(const struct HcsimQuery *q,
                                        const double *sizes,
                                        size_t len,
                                        uint64_t p,
                                        struct HcsimSharePlan **out);

// Releases a share plan. NULL is ignored.
void hcsim_share_plan_free(struct HcsimSharePlan *plan);

// Guaranteed load p^lambda, in the unit the sizes were given in.
// NaN if the handle is NULL.
double hcsim_share_plan_load(const struct HcsimSharePlan *plan);

// The LP optimum lambda = log_p of the load. NaN if NULL.
double hcsim_share_plan_lambda(const struct HcsimSharePlan *plan);

// Integer share of variable `var` (head order). 0 if out of range.
uint64_t hcsim_share_plan_share(const struct HcsimSharePlan *plan, size_t var);

// 1 if atom `atom` (body order) is marked for broadcast routing,
// 0 otherwise or if out of range.
int32_t hcsim_share_plan_is_broadcast(const struct HcsimSharePlan *plan, size_t atom);

// Share plan as JSON {variable: {exponent, share}}. Free with
// hcsim_string_free.
enum HcsimStatus hcsim_share_plan_to_json(const struct HcsimSharePlan *plan, char **out);

// Closed-form optimal load from the packing polytope; agrees with
// p^lambda of hcsim_share_plan_solve on the same inputs.
enum HcsimStatus hcsim_closed_form_load(const struct HcsimQuery *q,
                                        const double *sizes,
                                        size_t len,
                                        uint64_t p,
                                        double *out);

// Space exponent for the given sizes and p; the optimal load is
// max_j(sizes) / p^(1 - result).
enum HcsimStatus hcsim_space_exponent(const struct HcsimQuery *q,
                                      const double *sizes,
                                      size_t len,
                                      uint64_t p,
                                      double *out);

// Maximum fractional edge-packing value tau* of the query.
enum HcsimStatus hcsim_max_packing_value(const struct HcsimQuery *q, double *out);

// Non-dominated packing-polytope vertices as a JSON array of arrays of
// exact fraction strings. Free with hcsim_string_free.
enum HcsimStatus hcsim_packing_vertices_json(const struct HcsimQuery *q, char **out);

// Runs a full seeded experiment described by a JSON config:
//
// ```json
// {
//   "query": "Q(x,y,z) :- S1(x,z), S2(y,z)",
//   "relations": {"S1": "gen:uniform,m=2000", "S2": "data/s2.tsv"},
//   "n": 10000,
//   "p": 16,
//   "seeds": [1, 2, 3],
//   "algorithm": "hc-optimal",
//   "loads_only": false
// }
// ```
//
// `relations` maps every atom's relation name to a TSV path or a
// `gen:uniform,m=..` / `gen:matching,m=..` / `gen:zipf,m=..,s=..`
// generator spec; `n` is required when any source is a generator;
// `algorithm` is one of hc-optimal, hc-equal, hash-join, skew-join,
// bin-combination (default hc-optimal). The report JSON is written to
// `out`; free it with hcsim_string_free.
enum HcsimStatus hcsim_run_experiment_json(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HCSIM_H */
