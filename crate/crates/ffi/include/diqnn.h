#ifndef DIQNN_H
#define DIQNN_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum DiqnnStatus {
  DIQNN_STATUS_OK = 0,
  DIQNN_STATUS_NULL_POINTER = 1,
  DIQNN_STATUS_INVALID_ARGUMENT = 2,
  DIQNN_STATUS_DIMENSION = 3,
  DIQNN_STATUS_FORMAT = 4,
  DIQNN_STATUS_IO = 5,
  DIQNN_STATUS_DIVERGED = 6,
  DIQNN_STATUS_UNSUPPORTED = 7,
  DIQNN_STATUS_DEGENERATE = 8,
  DIQNN_STATUS_BUFFER_TOO_SMALL = 9,
  DIQNN_STATUS_INTERNAL = 10,
  DIQNN_STATUS_PANIC = 11,
} DiqnnStatus;

typedef enum DiqnnOptimizer {
  DIQNN_OPTIMIZER_GD = 0,
  DIQNN_OPTIMIZER_SGD = 1,
  DIQNN_OPTIMIZER_GRADIENT_FLOW = 2,
} DiqnnOptimizer;

// Opaque dataset handle.
typedef struct DiqnnDataset DiqnnDataset;

// Opaque network handle.
typedef struct DiqnnNetwork DiqnnNetwork;

typedef struct DiqnnMarginSummary {
  double delta_mu;
  double mu1;
  double mu2;
  double theta_norm;
  size_t degenerate;
  size_t samples;
} DiqnnMarginSummary;

typedef struct DiqnnTrainConfig {
  double learning_rate;
  // Zero means full batch.
  size_t batch_size;
  size_t epochs;
  double lambda_margin;
  uint64_t seed;
  enum DiqnnOptimizer optimizer;
  double flow_step;
  double total_time;
} DiqnnTrainConfig;

typedef struct DiqnnTrainResult {
  size_t steps;
  double final_loss;
  double train_accuracy;
  // NaN when no test set was given.
  double test_accuracy;
  double delta_mu;
} DiqnnTrainResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *diqnn_version(void);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *diqnn_last_error(void);

// Creates a randomly initialized network from a model string such as
// `quadratic` or `lowrank:4`.
//
// # Safety
// `model` must be a NUL-terminated string and `out` a valid pointer.
enum DiqnnStatus diqnn_network_new(const char *model,
                                   size_t inputs,
                                   size_t classes,
                                   uint64_t seed,
                                   struct DiqnnNetwork **out);

// The rank-one XOR network started at `c₁ = e₁, c₂ = e₂`.
//
// # Safety
// `out` must be a valid pointer.
enum DiqnnStatus diqnn_network_new_xor(struct DiqnnNetwork **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DiqnnStatus diqnn_network_load(const char *path, struct DiqnnNetwork **out);

// # Safety
// `net` must be a live handle and `path` a NUL-terminated string.
enum DiqnnStatus diqnn_network_save(const struct DiqnnNetwork *net, const char *path);

// # Safety
// `net` must be null or a handle not yet freed.
void diqnn_network_free(struct DiqnnNetwork *net);

// Number of parameters, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t diqnn_network_param_count(const struct DiqnnNetwork *net);

// # Safety
// `net` must be null or a live handle.
size_t diqnn_network_inputs(const struct DiqnnNetwork *net);

// # Safety
// `net` must be null or a live handle.
size_t diqnn_network_outputs(const struct DiqnnNetwork *net);

// Homogeneity degree `L`; `Unsupported` for nets with linear layers.
//
// # Safety
// `net` must be a live handle and `out` a valid pointer.
enum DiqnnStatus diqnn_network_degree(const struct DiqnnNetwork *net, uint32_t *out);

// Copies the flat parameter vector into `buf`.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum DiqnnStatus diqnn_network_get_params(const struct DiqnnNetwork *net, double *buf, size_t len);

// Replaces the parameters; `len` must equal the parameter count.
//
// # Safety
// `params` must point to `len` doubles.
enum DiqnnStatus diqnn_network_set_params(struct DiqnnNetwork *net,
                                          const double *params,
                                          size_t len);

// Evaluates the network on one input of length `inputs`.
//
// # Safety
// `x` must point to `x_len` doubles and `out` to `out_len` writable doubles.
enum DiqnnStatus diqnn_network_forward(const struct DiqnnNetwork *net,
                                       const double *x,
                                       size_t x_len,
                                       double *out,
                                       size_t out_len);

// Builds a dataset from row-major features (`n × dim`) and labels below
// `classes`. The arrays are copied.
//
// # Safety
// `features` must point to `n * dim` doubles and `labels` to `n` values.
enum DiqnnStatus diqnn_dataset_from_arrays(const double *features,
                                           const size_t *labels,
                                           size_t n,
                                           size_t dim,
                                           size_t classes,
                                           struct DiqnnDataset **out);

// # Safety
// Both paths must be NUL-terminated strings and `out` a valid pointer.
enum DiqnnStatus diqnn_dataset_load_idx(const char *images,
                                        const char *labels,
                                        struct DiqnnDataset **out);

// The four-point XOR problem.
//
// # Safety
// `out` must be a valid pointer.
enum DiqnnStatus diqnn_dataset_xor(struct DiqnnDataset **out);

// # Safety
// `data` must be null or a live handle.
size_t diqnn_dataset_len(const struct DiqnnDataset *data);

// # Safety
// `data` must be null or a live handle.
size_t diqnn_dataset_dim(const struct DiqnnDataset *data);

// # Safety
// `data` must be null or a live handle.
size_t diqnn_dataset_classes(const struct DiqnnDataset *data);

// # Safety
// `data` must be null or a handle not yet freed.
void diqnn_dataset_free(struct DiqnnDataset *data);

// Normalized margin statistics of `net` on `data`.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum DiqnnStatus diqnn_margin_summary(const struct DiqnnNetwork *net,
                                      const struct DiqnnDataset *data,
                                      struct DiqnnMarginSummary *out);

// Gradient of the normalized margin with respect to the parameters.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum DiqnnStatus diqnn_margin_gradient(const struct DiqnnNetwork *net,
                                       const struct DiqnnDataset *data,
                                       double *buf,
                                       size_t len);

// Default hyperparameters: SGD, learning rate 0.01, batch 100, 5 epochs.
struct DiqnnTrainConfig diqnn_train_config_default(void);

// Trains `net` in place. `test` may be null. `out` may be null.
//
// # Safety
// Handles must be live; `config` must point to a config struct.
enum DiqnnStatus diqnn_train(struct DiqnnNetwork *net,
                             const struct DiqnnDataset *train_set,
                             const struct DiqnnDataset *test_set,
                             const struct DiqnnTrainConfig *config,
                             struct DiqnnTrainResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIQNN_H */
