#ifndef PGSLAM_H
#define PGSLAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PgslamStatus {
  PGSLAM_STATUS_OK = 0,
  PGSLAM_STATUS_NULL_POINTER = 1,
  PGSLAM_STATUS_INVALID_ARGUMENT = 2,
  PGSLAM_STATUS_PARSE = 3,
  PGSLAM_STATUS_IO = 4,
  PGSLAM_STATUS_UNKNOWN_NODE = 5,
  PGSLAM_STATUS_NUMERICAL = 6,
  PGSLAM_STATUS_INTERNAL = 7,
} PgslamStatus;

typedef enum PgslamEdgeKind {
  PGSLAM_EDGE_KIND_ODOMETRY = 0,
  PGSLAM_EDGE_KIND_LOOP_VISUAL = 1,
  PGSLAM_EDGE_KIND_LOOP_LIDAR = 2,
} PgslamEdgeKind;

typedef enum PgslamTrackMode {
  PGSLAM_TRACK_MODE_ESTIMATED = 0,
  PGSLAM_TRACK_MODE_FALLBACK = 1,
} PgslamTrackMode;

/**
 * Opaque pose graph.
 */
typedef struct PgslamGraph PgslamGraph;

/**
 * Opaque pose tracker.
 */
typedef struct PgslamTracker PgslamTracker;

/**
 * Run parameters. Obtain defaults from [`pgslam_config_default`].
 */
typedef struct PgslamConfig {
  double cell_size;
  double s;
  /**
   * Nonzero selects the node-information weight.
   */
  int32_t node_weight;
  double submap_side;
  size_t window;
  double huber_delta;
  size_t max_iter;
  double tol;
  double deadline_ms;
} PgslamConfig;

typedef struct PgslamPose {
  double x;
  double y;
  double theta;
} PgslamPose;

typedef struct PgslamOptimizeResult {
  size_t iterations;
  double initial_cost;
  double final_cost;
  bool converged;
} PgslamOptimizeResult;

typedef struct PgslamReduceResult {
  size_t nodes_before;
  size_t edges_before;
  size_t nodes;
  size_t edges;
  double npc;
  double arps_pct;
} PgslamReduceResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *pgslam_last_error(void);

struct PgslamConfig pgslam_config_default(void);

/**
 * Creates an empty graph. Free with [`pgslam_graph_free`].
 */
struct PgslamGraph *pgslam_graph_new(void);

/**
 * # Safety
 * `graph` must be null or a handle from this library not yet freed.
 */
void pgslam_graph_free(struct PgslamGraph *graph);

/**
 * Parses g2o text into a new graph stored in `*out`.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a writable pointer.
 */
enum PgslamStatus pgslam_graph_parse_g2o(const char *text, struct PgslamGraph **out);

/**
 * Reads a g2o file into a new graph stored in `*out`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum PgslamStatus pgslam_graph_load(const char *path, struct PgslamGraph **out);

/**
 * Serializes the live part of the graph as g2o text. Free the result with
 * [`pgslam_string_free`]. Returns null if `graph` is null.
 *
 * # Safety
 * `graph` must be null or a valid handle.
 */
char *pgslam_graph_to_g2o(const struct PgslamGraph *graph);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void pgslam_string_free(char *s);

/**
 * # Safety
 * `graph` must be a valid handle and `id` writable.
 */
enum PgslamStatus pgslam_graph_add_node(struct PgslamGraph *graph,
                                        struct PgslamPose pose,
                                        uint64_t *id);

/**
 * Adds a relative-pose edge. `info` holds the upper triangle of the 3×3
 * information matrix in g2o order (xx, xy, xt, yy, yt, tt).
 *
 * # Safety
 * `graph` must be a valid handle and `info` must point to 6 doubles.
 */
enum PgslamStatus pgslam_graph_add_edge(struct PgslamGraph *graph,
                                        uint64_t from,
                                        uint64_t to,
                                        enum PgslamEdgeKind kind,
                                        struct PgslamPose measurement,
                                        const double *info);

/**
 * Adds a rigid zero-constraint between two frames captured together.
 *
 * # Safety
 * `graph` must be a valid handle.
 */
enum PgslamStatus pgslam_graph_add_zero_constraint(struct PgslamGraph *graph,
                                                   uint64_t a,
                                                   uint64_t b);

/**
 * Number of live nodes, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a valid handle.
 */
size_t pgslam_graph_node_count(const struct PgslamGraph *graph);

/**
 * Number of live edges, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a valid handle.
 */
size_t pgslam_graph_edge_count(const struct PgslamGraph *graph);

/**
 * # Safety
 * `graph` must be a valid handle and `out` writable.
 */
enum PgslamStatus pgslam_graph_pose(const struct PgslamGraph *graph,
                                    uint64_t id,
                                    struct PgslamPose *out);

/**
 * Optimizes the graph in place. `config` and `result` may be null.
 *
 * # Safety
 * `graph` must be a valid handle; non-null pointers must be valid.
 */
enum PgslamStatus pgslam_graph_optimize(struct PgslamGraph *graph,
                                        const struct PgslamConfig *config,
                                        struct PgslamOptimizeResult *result);

/**
 * Runs the full reduction (optimize, prune, sparsify, re-optimize) and
 * replaces the graph with the reduced one. `config` and `result` may be
 * null.
 *
 * # Safety
 * `graph` must be a valid handle; non-null pointers must be valid.
 */
enum PgslamStatus pgslam_graph_reduce(struct PgslamGraph *graph,
                                      const struct PgslamConfig *config,
                                      struct PgslamReduceResult *result);

/**
 * Average relative position shift (percent) of `candidate` against
 * `original` over shared node ids.
 *
 * # Safety
 * Both handles must be valid and `out` writable.
 */
enum PgslamStatus pgslam_metric_arps(const struct PgslamGraph *original,
                                     const struct PgslamGraph *candidate,
                                     double *out);

/**
 * Creates a tracker starting at `initial`. `config` may be null.
 *
 * # Safety
 * `out` must be writable; `config` must be null or valid.
 */
enum PgslamStatus pgslam_tracker_new(struct PgslamPose initial,
                                     const struct PgslamConfig *config,
                                     struct PgslamTracker **out);

/**
 * # Safety
 * `tracker` must be null or a handle from this library not yet freed.
 */
void pgslam_tracker_free(struct PgslamTracker *tracker);

/**
 * Re-anchors the tracker on optimized node `node` of `graph`, which was
 * registered at tracker step `node_step`. Required once before the first
 * [`pgslam_tracker_step`] and after every map update.
 *
 * # Safety
 * Both handles must be valid.
 */
enum PgslamStatus pgslam_tracker_rebase(struct PgslamTracker *tracker,
                                        const struct PgslamGraph *graph,
                                        uint64_t node,
                                        uint64_t node_step);

/**
 * Number of steps taken, or 0 for a null handle.
 *
 * # Safety
 * `tracker` must be null or a valid handle.
 */
uint64_t pgslam_tracker_step_count(const struct PgslamTracker *tracker);

/**
 * Advances the tracker by one odometry increment against the optimized
 * map in `graph`. A step whose `elapsed_ms` exceeds the deadline falls
 * back to dead reckoning on the cached correction. `info` holds the
 * odometry information upper triangle as in [`pgslam_graph_add_edge`].
 *
 * # Safety
 * Handles must be valid, `info` must point to 6 doubles, and `pose` and
 * `mode` must be writable.
 */
enum PgslamStatus pgslam_tracker_step(struct PgslamTracker *tracker,
                                      const struct PgslamGraph *graph,
                                      struct PgslamPose odometry,
                                      const double *info,
                                      double elapsed_ms,
                                      struct PgslamPose *pose,
                                      enum PgslamTrackMode *mode);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGSLAM_H */
