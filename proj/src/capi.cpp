#include "lnl/lnl.h"

#include <exception>
#include <fstream>
#include <memory>
#include <string>

#include "lnl/datagen.hpp"
#include "lnl/errors.hpp"
#include "lnl/harness.hpp"
#include "lnl/model.hpp"
#include "lnl/report.hpp"
#include "lnl/trainer.hpp"
#include "lnl/transition.hpp"

struct lnl_dataset {
  lnl::LabeledDataset value;
};

struct lnl_matrix {
  lnl::TransitionMatrix value;
};

struct lnl_model {
  lnl::MlpParams value;
};

namespace {

thread_local std::string last_error;

lnl_status fail(lnl_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Runs `body`, mapping exceptions onto status codes.
template <class Body>
lnl_status guarded(Body&& body) {
  try {
    body();
    last_error.clear();
    return LNL_OK;
  } catch (const lnl::ParseError& e) {
    return fail(LNL_ERR_PARSE, e.what());
  } catch (const lnl::ValidationError& e) {
    return fail(LNL_ERR_VALIDATION, e.what());
  } catch (const lnl::IoError& e) {
    return fail(LNL_ERR_IO, e.what());
  } catch (const lnl::DomainError& e) {
    return fail(LNL_ERR_DOMAIN, e.what());
  } catch (const std::logic_error& e) {
    return fail(LNL_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(LNL_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(LNL_ERR_RUNTIME, "unknown error");
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) {
    throw std::invalid_argument(std::string(name) + " must not be null");
  }
}

lnl::TrainConfig to_train_config(const lnl_train_config& c) {
  lnl::TrainConfig out;
  out.epochs = c.epochs;
  out.batch_size = c.batch_size;
  out.learning_rate = c.learning_rate;
  out.patience = c.patience;
  out.seed = c.seed;
  out.dropout = c.dropout != 0;
  return out;
}

void from_train_config(const lnl::TrainConfig& c, lnl_train_config* out) {
  out->epochs = c.epochs;
  out->batch_size = c.batch_size;
  out->learning_rate = c.learning_rate;
  out->patience = c.patience;
  out->seed = c.seed;
  out->dropout = c.dropout ? 1 : 0;
}

lnl::LossSpec to_loss_spec(lnl_loss_kind kind, const lnl_matrix* t) {
  switch (kind) {
    case LNL_LOSS_BASELINE:
      return lnl::LossSpec::baseline();
    case LNL_LOSS_FORWARD:
      require(t, "t");
      return lnl::LossSpec::forward(t->value);
    case LNL_LOSS_REWEIGHT:
      require(t, "t");
      return lnl::LossSpec::reweight(t->value);
  }
  throw std::invalid_argument("unknown loss kind " + std::to_string(static_cast<int>(kind)));
}

lnl::RevisionMode to_mode(lnl_revision_mode mode) {
  switch (mode) {
    case LNL_REVISION_ALPHA:
      return lnl::RevisionMode::alpha;
    case LNL_REVISION_SOFTMAX:
      return lnl::RevisionMode::softmax;
  }
  throw std::invalid_argument("unknown revision mode " + std::to_string(static_cast<int>(mode)));
}

}  // namespace

extern "C" {

const char* lnl_last_error(void) { return last_error.c_str(); }

const char* lnl_status_string(lnl_status status) {
  switch (status) {
    case LNL_OK: return "ok";
    case LNL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case LNL_ERR_DOMAIN: return "domain error";
    case LNL_ERR_PARSE: return "parse error";
    case LNL_ERR_IO: return "i/o error";
    case LNL_ERR_VALIDATION: return "validation error";
    case LNL_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

const char* lnl_version(void) { return "0.1.0"; }

void lnl_blob_spec_default(lnl_blob_spec* spec) {
  if (spec == nullptr) return;
  spec->classes = 4;
  spec->dim = 16;
  spec->n_per_class = 2500;
  spec->separation = lnl::kDefaultSeparation;
  spec->sigma = 1.0;
  spec->seed = 0;
}

void lnl_train_config_default(lnl_train_config* config) {
  if (config != nullptr) from_train_config(lnl::TrainConfig{}, config);
}

void lnl_revision_config_default(lnl_train_config* config) {
  if (config != nullptr) from_train_config(lnl::TrainConfig::revision_defaults(), config);
}

lnl_status lnl_dataset_generate(const lnl_blob_spec* spec, lnl_dataset** out) {
  return guarded([&] {
    require(spec, "spec");
    require(out, "out");
    const auto blobs = lnl::BlobSpec::simplex(spec->classes, spec->dim, spec->n_per_class, spec->separation,
                                              spec->sigma, spec->seed);
    *out = new lnl_dataset{lnl::generate_blobs(blobs)};
  });
}

lnl_status lnl_dataset_load(const char* path, lnl_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new lnl_dataset{lnl::load_dataset(path)};
  });
}

lnl_status lnl_dataset_save(const lnl_dataset* data, const char* path) {
  return guarded([&] {
    require(data, "data");
    require(path, "path");
    lnl::save_dataset(data->value, path);
  });
}

lnl_status lnl_dataset_inject(const lnl_dataset* data, const lnl_matrix* t, uint64_t seed, lnl_dataset** out) {
  return guarded([&] {
    require(data, "data");
    require(t, "t");
    require(out, "out");
    *out = new lnl_dataset{lnl::inject_noise(data->value, t->value, seed)};
  });
}

lnl_status lnl_dataset_split(const lnl_dataset* data, double train_fraction, uint64_t seed, lnl_dataset** first,
                             lnl_dataset** second) {
  return guarded([&] {
    require(data, "data");
    require(first, "first");
    require(second, "second");
    auto [a, b] = lnl::split(data->value, train_fraction, seed);
    auto left = std::make_unique<lnl_dataset>(lnl_dataset{std::move(a)});
    *second = new lnl_dataset{std::move(b)};
    *first = left.release();
  });
}

lnl_status lnl_dataset_shape(const lnl_dataset* data, size_t* n, size_t* dim, size_t* classes) {
  return guarded([&] {
    require(data, "data");
    if (n) *n = data->value.size();
    if (dim) *dim = data->value.dim();
    if (classes) *classes = data->value.classes;
  });
}

int lnl_dataset_has_noisy(const lnl_dataset* data) {
  return data != nullptr && data->value.noisy_labels.has_value() ? 1 : 0;
}

lnl_status lnl_dataset_flip_matrix(const lnl_dataset* data, lnl_matrix** out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    *out = new lnl_matrix{lnl::TransitionMatrix(lnl::empirical_flip_matrix(data->value))};
  });
}

void lnl_dataset_free(lnl_dataset* data) { delete data; }

lnl_status lnl_matrix_create(size_t classes, const double* row_major, lnl_matrix** out) {
  return guarded([&] {
    require(row_major, "row_major");
    require(out, "out");
    std::vector<double> values(row_major, row_major + classes * classes);
    *out = new lnl_matrix{lnl::TransitionMatrix(classes, std::move(values))};
  });
}

lnl_status lnl_matrix_preset(const char* name, size_t classes, lnl_matrix** out) {
  return guarded([&] {
    require(name, "name");
    require(out, "out");
    *out = new lnl_matrix{lnl::TransitionMatrix::preset(name, classes)};
  });
}

lnl_status lnl_matrix_load(const char* path, int validate, lnl_matrix** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new lnl_matrix{lnl::load_matrix(path, validate != 0)};
  });
}

lnl_status lnl_matrix_save(const lnl_matrix* m, const char* path) {
  return guarded([&] {
    require(m, "m");
    require(path, "path");
    lnl::save_matrix(m->value.tensor(), path);
  });
}

size_t lnl_matrix_dim(const lnl_matrix* m) { return m == nullptr ? 0 : m->value.dim(); }

lnl_status lnl_matrix_get(const lnl_matrix* m, double* out) {
  return guarded([&] {
    require(m, "m");
    require(out, "out");
    const auto values = m->value.tensor().values();
    std::copy(values.begin(), values.end(), out);
  });
}

lnl_status lnl_matrix_validate(const lnl_matrix* m) {
  return guarded([&] {
    require(m, "m");
    (void)m->value.validated();
  });
}

lnl_status lnl_matrix_rre(const lnl_matrix* reference, const lnl_matrix* estimate, double* out) {
  return guarded([&] {
    require(reference, "reference");
    require(estimate, "estimate");
    require(out, "out");
    *out = lnl::rre(reference->value, estimate->value);
  });
}

void lnl_matrix_free(lnl_matrix* m) { delete m; }

lnl_status lnl_model_init(const lnl_mlp_config* config, lnl_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    if (config->hidden_count > 0) {
      require(config->hidden_dims, "hidden_dims");
    }
    lnl::MlpConfig c;
    c.input_dim = config->input_dim;
    c.hidden_dims.assign(config->hidden_dims, config->hidden_dims + config->hidden_count);
    c.classes = config->classes;
    c.dropout_rate = config->dropout_rate;
    c.seed = config->seed;
    *out = new lnl_model{lnl::init_mlp(c)};
  });
}

lnl_status lnl_model_load(const char* path, lnl_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new lnl_model{lnl::load_checkpoint(path)};
  });
}

lnl_status lnl_model_save(const lnl_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    lnl::save_checkpoint(model->value, path);
  });
}

size_t lnl_model_classes(const lnl_model* model) { return model == nullptr ? 0 : model->value.config.classes; }

lnl_status lnl_model_predict(const lnl_model* model, const lnl_dataset* data, double* probs, int* labels) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    const lnl::Tensor p = lnl::predict_proba(model->value, data->value.features);
    if (probs != nullptr) {
      const auto values = p.values();
      std::copy(values.begin(), values.end(), probs);
    }
    if (labels != nullptr) {
      const auto predicted = lnl::argmax_rows(p);
      std::copy(predicted.begin(), predicted.end(), labels);
    }
  });
}

void lnl_model_free(lnl_model* model) { delete model; }

lnl_status lnl_train(const lnl_model* start, lnl_loss_kind kind, const lnl_matrix* t, int beta_stop_gradient,
                     int skip_validation, const lnl_dataset* train, const lnl_dataset* val,
                     const lnl_train_config* config, const char* history_csv, lnl_model** out) {
  return guarded([&] {
    require(start, "start");
    require(train, "train");
    require(val, "val");
    require(config, "config");
    require(out, "out");
    lnl::LossSpec spec = to_loss_spec(kind, kind == LNL_LOSS_BASELINE ? nullptr : t);
    spec.beta_stop_gradient = beta_stop_gradient != 0;
    spec.skip_validation = skip_validation != 0;
    lnl::TrainResult fit = lnl::train(start->value, spec, train->value, val->value, to_train_config(*config));
    if (history_csv != nullptr) {
      fit.history.write_csv(history_csv);
    }
    *out = new lnl_model{std::move(fit.params)};
  });
}

lnl_status lnl_estimate_anchor(const lnl_model* model, const lnl_dataset* data, double percentile, size_t top_k,
                               lnl_matrix** out) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(out, "out");
    *out = new lnl_matrix{lnl::estimate_transition(model->value, data->value, {percentile, top_k})};
  });
}

lnl_status lnl_revise(const lnl_model* start, const lnl_matrix* t_hat, const lnl_dataset* train,
                      const lnl_dataset* val, const lnl_train_config* config, lnl_revision_mode mode, double alpha,
                      int beta_stop_gradient, const char* history_csv, lnl_model** out_model, lnl_matrix** out_t) {
  return guarded([&] {
    require(start, "start");
    require(t_hat, "t_hat");
    require(train, "train");
    require(val, "val");
    require(config, "config");
    require(out_model, "out_model");
    require(out_t, "out_t");
    const lnl::RevisionSettings settings{to_mode(mode), alpha};
    lnl::RevisionOutcome r = lnl::revise(start->value, t_hat->value, train->value, val->value,
                                         to_train_config(*config), settings, beta_stop_gradient != 0);
    if (history_csv != nullptr) {
      r.history.write_csv(history_csv);
    }
    auto t = std::make_unique<lnl_matrix>(lnl_matrix{lnl::TransitionMatrix(std::move(r.t_final))});
    *out_model = new lnl_model{std::move(r.params)};
    *out_t = t.release();
  });
}

lnl_status lnl_evaluate(const lnl_model* model, const lnl_dataset* test, lnl_loss_kind kind, const lnl_matrix* t,
                        double* loss, double* accuracy_percent) {
  return guarded([&] {
    require(model, "model");
    require(test, "test");
    lnl::LossSpec spec = to_loss_spec(kind, kind == LNL_LOSS_BASELINE ? nullptr : t);
    spec.skip_validation = true;
    const lnl::EvalResult r = lnl::evaluate(model->value, test->value, spec);
    if (loss) *loss = r.loss;
    if (accuracy_percent) *accuracy_percent = r.accuracy;
  });
}

lnl_status lnl_experiment_run_file(const char* config_path, const lnl_experiment_overrides* overrides,
                                   size_t* failures) {
  return guarded([&] {
    require(config_path, "config_path");
    lnl::ExperimentConfig config = lnl::load_experiment_config(config_path);
    if (overrides != nullptr) {
      if (overrides->output_dir != nullptr) config.output_dir = overrides->output_dir;
      if (overrides->has_seed) config.master_seed = overrides->seed;
      if (overrides->workers > 0) config.workers = overrides->workers;
      if (overrides->fail_fast) config.fail_fast = true;
      if (overrides->no_validate) config.validate_matrices = false;
    }
    config.check();
    const lnl::ExperimentRun run = lnl::run_experiment(config);
    const lnl::ExperimentSummary summary = lnl::aggregate(run.results, run.true_t);
    lnl::write_report(summary, run, config.output_dir);
    std::ofstream resolved(config.output_dir / "config.json");
    resolved << lnl::experiment_config_json(config);
    if (!resolved) {
      throw lnl::IoError("cannot write " + (config.output_dir / "config.json").string());
    }
    if (failures != nullptr) *failures = run.failures.size();
  });
}

lnl_status lnl_report(const char* dir) {
  return guarded([&] {
    require(dir, "dir");
    (void)lnl::report_from_directory(dir);
  });
}

}  // extern "C"
