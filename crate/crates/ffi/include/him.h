#ifndef HIM_H
#define HIM_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum HimStatus {
  HIM_STATUS_OK = 0,
  HIM_STATUS_NULL_POINTER = 1,
  HIM_STATUS_INVALID_UTF8 = 2,
  HIM_STATUS_IO = 3,
  HIM_STATUS_PARSE = 4,
  HIM_STATUS_EMPTY_GRAPH = 5,
  HIM_STATUS_NODE_OUT_OF_RANGE = 6,
  HIM_STATUS_EMPTY_SEED_SET = 7,
  HIM_STATUS_DIMENSION_MISMATCH = 8,
  HIM_STATUS_ODD_DIMENSION = 9,
  HIM_STATUS_CURVATURE_MISMATCH = 10,
  HIM_STATUS_K_OUT_OF_RANGE = 11,
  HIM_STATUS_TOO_MANY_EDGES = 12,
  HIM_STATUS_DIVERGED = 13,
  HIM_STATUS_INVALID_ARGUMENT = 14,
  HIM_STATUS_BUFFER_TOO_SMALL = 15,
  HIM_STATUS_PANIC = 99,
} HimStatus;

/**
 * Diffusion model families.
 */
typedef enum HimModelKind {
  HIM_MODEL_KIND_IC = 0,
  HIM_MODEL_KIND_WLT = 1,
} HimModelKind;

/**
 * Seed selection methods.
 */
typedef enum HimMethod {
  /**
   * Adaptive sliding window.
   */
  HIM_METHOD_HIM = 0,
  /**
   * Lowest distance to the origin.
   */
  HIM_METHOD_HIM_MD = 1,
  HIM_METHOD_DEGREE = 2,
  HIM_METHOD_RANDOM = 3,
} HimMethod;

/**
 * Opaque embedding table.
 */
typedef struct HimEmbedding HimEmbedding;

/**
 * Opaque social graph.
 */
typedef struct HimGraph HimGraph;

/**
 * Opaque frozen diffusion model instance.
 */
typedef struct HimModel HimModel;

/**
 * Training parameters. Start from [`him_train_config_default`].
 */
typedef struct HimTrainConfig {
  size_t dim;
  double gamma;
  size_t negatives;
  size_t epochs;
  double learning_rate;
  size_t batch_size;
  double init_std;
  /**
   * Nonzero selects Adam, zero plain SGD.
   */
  uint8_t use_adam;
  /**
   * Nonzero keeps the regularizer sign that pushes activators outward.
   */
  uint8_t literal_reg;
  uint64_t seed;
} HimTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *him_last_error(void);

struct HimTrainConfig him_train_config_default(void);

/**
 * Loads an edge list.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HimStatus him_graph_load(const char *path, struct HimGraph **out);

/**
 * Builds a graph on nodes `0..node_count` from `edge_count` pairs stored
 * as `[u0, v0, u1, v1, ...]`.
 *
 * # Safety
 * `edges` must point to `2 * edge_count` readable values; `out` must be writable.
 */
enum HimStatus him_graph_from_edges(size_t node_count,
                                    const size_t *edges,
                                    size_t edge_count,
                                    struct HimGraph **out);

/**
 * # Safety
 * `graph` must come from this library and not be used afterwards.
 */
void him_graph_free(struct HimGraph *graph);

/**
 * Node count, or 0 for NULL.
 *
 * # Safety
 * `graph` must be NULL or a live handle.
 */
size_t him_graph_node_count(const struct HimGraph *graph);

/**
 * Undirected edge count, or 0 for NULL.
 *
 * # Safety
 * `graph` must be NULL or a live handle.
 */
size_t him_graph_edge_count(const struct HimGraph *graph);

/**
 * Draws a frozen model instance from stream `(model, 0)` of `seed`.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum HimStatus him_model_sample(const struct HimGraph *graph,
                                enum HimModelKind kind,
                                uint64_t seed,
                                struct HimModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HimStatus him_model_load(const char *path, struct HimModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum HimStatus him_model_save(const struct HimModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void him_model_free(struct HimModel *model);

/**
 * Monte Carlo spread ratio (fraction of nodes) of a seed set.
 *
 * # Safety
 * `seeds` must point to `seed_count` values; `mean` and `std` must be writable.
 */
enum HimStatus him_estimate_spread(const struct HimModel *model,
                                   const size_t *seeds,
                                   size_t seed_count,
                                   size_t rounds,
                                   uint64_t seed,
                                   double *mean,
                                   double *std);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HimStatus him_embedding_load(const char *path, struct HimEmbedding **out);

/**
 * # Safety
 * `embedding` must be a live handle; `path` a NUL-terminated string.
 */
enum HimStatus him_embedding_save(const struct HimEmbedding *embedding, const char *path);

/**
 * Trains an embedding. When `model` is non-NULL, `instance_count`
 * propagation instances are simulated from seed sets of size
 * `ceil(seed_ratio * |V|)` using the config seed; otherwise only the graph
 * structure is used.
 *
 * # Safety
 * `graph` and `config` must be valid; `model` may be NULL; `out` must be writable.
 */
enum HimStatus him_embedding_train(const struct HimGraph *graph,
                                   const struct HimModel *model,
                                   double seed_ratio,
                                   size_t instance_count,
                                   const struct HimTrainConfig *config,
                                   struct HimEmbedding **out);

/**
 * # Safety
 * `embedding` must come from this library and not be used afterwards.
 */
void him_embedding_free(struct HimEmbedding *embedding);

/**
 * Squared distance of `node` to the origin.
 *
 * # Safety
 * `embedding` must be a live handle; `out` must be writable.
 */
enum HimStatus him_embedding_ldo(const struct HimEmbedding *embedding, size_t node, double *out);

/**
 * Picks `k` seeds into `out_seeds`, which must hold `out_capacity >= k`
 * values. `embedding` may be NULL for the degree and random methods. A
 * non-positive `beta` selects the size-based default. `seed` drives the
 * random method only.
 *
 * # Safety
 * `graph` must be a live handle, `embedding` NULL or live, `out_seeds`
 * writable for `out_capacity` values.
 */
enum HimStatus him_select(const struct HimGraph *graph,
                          const struct HimEmbedding *embedding,
                          enum HimMethod method,
                          size_t k,
                          double beta,
                          uint64_t seed,
                          size_t *out_seeds,
                          size_t out_capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIM_H */
