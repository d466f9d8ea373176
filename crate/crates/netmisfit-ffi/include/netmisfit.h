#ifndef NETMISFIT_H
#define NETMISFIT_H

/* Generated by cbindgen from the netmisfit-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Test decisions, matching the CLI exit codes.
typedef enum {
  NMF_DECISION_WELL_SPECIFIED = 0,
  NMF_DECISION_MISSPECIFIED = 1,
  NMF_DECISION_DEGENERATE = 2,
} NmfDecision;

// ERG variance-bracket form.
typedef enum {
  NMF_ERG_MODE_GENERAL = 0,
  NMF_ERG_MODE_PAPER_LITERAL = 1,
} NmfErgMode;

// SBM decision path.
typedef enum {
  NMF_SBM_MODE_PAPER = 0,
  NMF_SBM_MODE_REDUCED = 1,
} NmfSbmMode;

// Statistic multiplier.
typedef enum {
  // C(n,2) for either model.
  NMF_SIZE_FACTOR_PAIRS = 0,
  // F = 1 (pairs with the paper-literal ERG statistic).
  NMF_SIZE_FACTOR_ONE = 1,
  // F = n, the vertex count (the SBM default).
  NMF_SIZE_FACTOR_VERTICES = 2,
} NmfSizeFactor;

// Status codes returned by every entry point.
typedef enum {
  NMF_STATUS_OK = 0,
  NMF_STATUS_NULL_ARGUMENT = 1,
  NMF_STATUS_INVALID_ARGUMENT = 2,
  NMF_STATUS_DATA_FORMAT = 3,
  NMF_STATUS_ESTIMATION_FAILED = 4,
  NMF_STATUS_INTERNAL = 5,
} NmfStatus;

// Opaque graph handle.
typedef struct NmfGraph NmfGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *nmf_version(void);

// Message for the most recent failure on this thread, or NULL. The
// returned string is owned by the caller; free with `nmf_string_free`.
char *nmf_last_error_message(void);

// Free a string allocated by this library.
//
// # Safety
// `s` must be NULL or a pointer previously returned by this library and
// not yet freed.
void nmf_string_free(char *s);

// Read a graph (and optional labels file) from disk.
//
// # Safety
// `path` must be a NUL-terminated string; `labels_path` may be NULL;
// `out` must be a valid pointer.
NmfStatus nmf_graph_read(const char *path, const char *labels_path, NmfGraph **out);

// Build a graph from a flat 1-based edge array [i1, j1, i2, j2, ...].
//
// # Safety
// `edges` must point to `2 * n_edges` readable u32 values (or be NULL
// when `n_edges` is 0); `out` must be valid.
NmfStatus nmf_graph_from_edges(uintptr_t n_vertices,
                               const uint32_t *edges,
                               uintptr_t n_edges,
                               NmfGraph **out);

// Attach 1-based block labels (length must equal the vertex count).
//
// # Safety
// `graph` must be a live handle; `labels` must point to `n_labels`
// readable u32 values.
NmfStatus nmf_graph_set_labels(NmfGraph *graph, const uint32_t *labels, uintptr_t n_labels);

// # Safety
// `graph` must be NULL or a live handle from this library, not yet freed.
void nmf_graph_free(NmfGraph *graph);

// Vertex count of a live handle; 0 for NULL.
//
// # Safety
// `graph` must be NULL or a live handle.
uintptr_t nmf_graph_vertex_count(const NmfGraph *graph);

// Edge count of a live handle; 0 for NULL.
//
// # Safety
// `graph` must be NULL or a live handle.
uintptr_t nmf_graph_edge_count(const NmfGraph *graph);

// Run the one-parameter ERG misspecification test.
//
// On success `out_decision` (if non-NULL) receives the decision and
// `out_json` (if non-NULL) a JSON report string owned by the caller.
//
// # Safety
// `graph` must be a live handle; out pointers may be NULL when the
// caller does not need them.
NmfStatus nmf_erg_test(const NmfGraph *graph,
                       double alpha,
                       NmfErgMode mode,
                       NmfSizeFactor size_factor,
                       NmfDecision *out_decision,
                       char **out_json);

// Run the SBM misspecification test.
//
// With `blocks == 0` the graph's attached labels feed the closed-form
// estimator; otherwise a variational fit with `blocks` blocks,
// `restarts` restarts, and `seed` recovers labels first. A negative
// `clamp_eps` selects the strict boundary policy.
//
// # Safety
// `graph` must be a live handle; out pointers may be NULL.
NmfStatus nmf_sbm_test(const NmfGraph *graph,
                       double alpha,
                       NmfSbmMode mode,
                       NmfSizeFactor size_factor,
                       uintptr_t blocks,
                       uintptr_t restarts,
                       uint64_t seed,
                       double clamp_eps,
                       bool drop_isolated,
                       NmfDecision *out_decision,
                       char **out_json);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* NETMISFIT_H */
