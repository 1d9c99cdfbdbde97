#ifndef LNL_LNL_H
#define LNL_LNL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LNL_API __attribute__((visibility("default")))
#else
#define LNL_API
#endif

typedef enum lnl_status {
  LNL_OK = 0,
  LNL_ERR_INVALID_ARGUMENT = 1, /* null pointer, bad shape, contract violation */
  LNL_ERR_DOMAIN = 2,           /* log of nonpositive value, zero denominator, zero-norm reference */
  LNL_ERR_PARSE = 3,
  LNL_ERR_IO = 4,
  LNL_ERR_VALIDATION = 5, /* matrix not row-stochastic */
  LNL_ERR_RUNTIME = 6     /* training diverged, stage failure, anything else */
} lnl_status;

/* Message for the last failing call on this thread; "" after a success. */
LNL_API const char* lnl_last_error(void);
LNL_API const char* lnl_status_string(lnl_status status);
LNL_API const char* lnl_version(void);

typedef struct lnl_dataset lnl_dataset;
typedef struct lnl_matrix lnl_matrix;
typedef struct lnl_model lnl_model;

typedef enum lnl_loss_kind {
  LNL_LOSS_BASELINE = 0,
  LNL_LOSS_FORWARD = 1,
  LNL_LOSS_REWEIGHT = 2
} lnl_loss_kind;

typedef enum lnl_revision_mode { LNL_REVISION_ALPHA = 0, LNL_REVISION_SOFTMAX = 1 } lnl_revision_mode;

typedef struct lnl_blob_spec {
  size_t classes;
  size_t dim;
  size_t n_per_class;
  double separation; /* pairwise distance between class means, in units of sigma */
  double sigma;
  uint64_t seed;
} lnl_blob_spec;

typedef struct lnl_mlp_config {
  size_t input_dim;
  const size_t* hidden_dims;
  size_t hidden_count;
  size_t classes;
  double dropout_rate;
  uint64_t seed;
} lnl_mlp_config;

typedef struct lnl_train_config {
  size_t epochs;
  size_t batch_size;
  double learning_rate;
  size_t patience;
  uint64_t seed;
  int dropout; /* nonzero enables dropout during training */
} lnl_train_config;

typedef struct lnl_experiment_overrides {
  const char* output_dir; /* NULL keeps the config value */
  int has_seed;
  uint64_t seed;
  size_t workers; /* 0 keeps the config value */
  int fail_fast;
  int no_validate;
} lnl_experiment_overrides;

LNL_API void lnl_blob_spec_default(lnl_blob_spec* spec);
LNL_API void lnl_train_config_default(lnl_train_config* config);
LNL_API void lnl_revision_config_default(lnl_train_config* config);

/* Datasets */
LNL_API lnl_status lnl_dataset_generate(const lnl_blob_spec* spec, lnl_dataset** out);
LNL_API lnl_status lnl_dataset_load(const char* path, lnl_dataset** out);
LNL_API lnl_status lnl_dataset_save(const lnl_dataset* data, const char* path);
LNL_API lnl_status lnl_dataset_inject(const lnl_dataset* data, const lnl_matrix* t, uint64_t seed, lnl_dataset** out);
LNL_API lnl_status lnl_dataset_split(const lnl_dataset* data, double train_fraction, uint64_t seed,
                                     lnl_dataset** first, lnl_dataset** second);
LNL_API lnl_status lnl_dataset_shape(const lnl_dataset* data, size_t* n, size_t* dim, size_t* classes);
LNL_API int lnl_dataset_has_noisy(const lnl_dataset* data);
LNL_API lnl_status lnl_dataset_flip_matrix(const lnl_dataset* data, lnl_matrix** out);
LNL_API void lnl_dataset_free(lnl_dataset* data);

/* Transition matrices. Creation does not validate; use lnl_matrix_validate. */
LNL_API lnl_status lnl_matrix_create(size_t classes, const double* row_major, lnl_matrix** out);
LNL_API lnl_status lnl_matrix_preset(const char* name, size_t classes, lnl_matrix** out);
LNL_API lnl_status lnl_matrix_load(const char* path, int validate, lnl_matrix** out);
LNL_API lnl_status lnl_matrix_save(const lnl_matrix* m, const char* path);
LNL_API size_t lnl_matrix_dim(const lnl_matrix* m);
/* Copies dim*dim entries, row-major. */
LNL_API lnl_status lnl_matrix_get(const lnl_matrix* m, double* out);
LNL_API lnl_status lnl_matrix_validate(const lnl_matrix* m);
LNL_API lnl_status lnl_matrix_rre(const lnl_matrix* reference, const lnl_matrix* estimate, double* out);
LNL_API void lnl_matrix_free(lnl_matrix* m);

/* Models */
LNL_API lnl_status lnl_model_init(const lnl_mlp_config* config, lnl_model** out);
LNL_API lnl_status lnl_model_load(const char* path, lnl_model** out);
LNL_API lnl_status lnl_model_save(const lnl_model* model, const char* path);
LNL_API size_t lnl_model_classes(const lnl_model* model);
/* probs receives n*classes doubles (may be NULL); labels receives n ints (may be NULL). */
LNL_API lnl_status lnl_model_predict(const lnl_model* model, const lnl_dataset* data, double* probs, int* labels);
LNL_API void lnl_model_free(lnl_model* model);

/* Training on noisy labels. `t` is required for forward and reweight and
   ignored for the baseline. history_csv may be NULL. */
LNL_API lnl_status lnl_train(const lnl_model* start, lnl_loss_kind kind, const lnl_matrix* t, int beta_stop_gradient,
                             int skip_validation, const lnl_dataset* train, const lnl_dataset* val,
                             const lnl_train_config* config, const char* history_csv, lnl_model** out);

LNL_API lnl_status lnl_estimate_anchor(const lnl_model* model, const lnl_dataset* data, double percentile,
                                       size_t top_k, lnl_matrix** out);

/* Refines t_hat with a learned slack starting from `start`. Both outputs are
   required. The returned matrix is the effective T and is not renormalized. */
LNL_API lnl_status lnl_revise(const lnl_model* start, const lnl_matrix* t_hat, const lnl_dataset* train,
                              const lnl_dataset* val, const lnl_train_config* config, lnl_revision_mode mode,
                              double alpha, int beta_stop_gradient, const char* history_csv, lnl_model** out_model,
                              lnl_matrix** out_t);

/* Scores against clean labels. */
LNL_API lnl_status lnl_evaluate(const lnl_model* model, const lnl_dataset* test, lnl_loss_kind kind,
                                const lnl_matrix* t, double* loss, double* accuracy_percent);

/* Runs a JSON experiment config end to end and writes the report.
   failures receives the number of failed (method, trial) pairs. */
LNL_API lnl_status lnl_experiment_run_file(const char* config_path, const lnl_experiment_overrides* overrides,
                                           size_t* failures);

/* Re-aggregates an output directory holding trials.csv. */
LNL_API lnl_status lnl_report(const char* dir);

#ifdef __cplusplus
}
#endif

#endif
