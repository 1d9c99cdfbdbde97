// Command-line front end over the C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnl/lnl.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Carries a status out of a subcommand so main can pick the exit code.
struct ApiFailure : std::runtime_error {
  lnl_status status;
  ApiFailure(lnl_status s, const std::string& what) : std::runtime_error(what), status(s) {}
};

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(lnl_status status, const char* doing) {
  if (status != LNL_OK) {
    throw ApiFailure(status, std::string(doing) + ": " + lnl_status_string(status) + ": " + lnl_last_error());
  }
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Dataset = std::unique_ptr<lnl_dataset, Deleter<lnl_dataset, lnl_dataset_free>>;
using Matrix = std::unique_ptr<lnl_matrix, Deleter<lnl_matrix, lnl_matrix_free>>;
using Model = std::unique_ptr<lnl_model, Deleter<lnl_model, lnl_model_free>>;

struct Shared {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = ".";
  bool no_validate = false;
  bool fail_fast = false;
  std::size_t workers = 0;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--seed", s.seed, "Random seed");
  cmd->add_option("--config", s.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", s.out, "Output directory")->capture_default_str();
  cmd->add_flag("--no-validate", s.no_validate, "Accept transition matrices that are not row-stochastic");
  cmd->add_flag("--fail-fast", s.fail_fast, "Abort on the first failing trial");
  cmd->add_option("--workers", s.workers, "Parallel trial workers");
}

json read_config(const Shared& s) {
  if (s.config.empty()) {
    return json::object();
  }
  std::ifstream in(s.config);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageFailure("cannot parse " + s.config + ": " + e.what());
  }
}

fs::path output_path(const Shared& s, const std::string& name) {
  fs::create_directories(s.out);
  return fs::path(s.out) / name;
}

Dataset load_data(const std::string& path) {
  lnl_dataset* d = nullptr;
  check(lnl_dataset_load(path.c_str(), &d), ("loading " + path).c_str());
  return Dataset(d);
}

Model load_model(const std::string& path) {
  lnl_model* m = nullptr;
  check(lnl_model_load(path.c_str(), &m), ("loading " + path).c_str());
  return Model(m);
}

Matrix matrix_from(const std::string& file, const std::string& preset, std::size_t classes, bool validate) {
  lnl_matrix* m = nullptr;
  if (!file.empty()) {
    check(lnl_matrix_load(file.c_str(), validate ? 1 : 0, &m), ("loading " + file).c_str());
  } else if (!preset.empty()) {
    check(lnl_matrix_preset(preset.c_str(), classes, &m), "building preset matrix");
  }
  return Matrix(m);
}

void print_matrix(const lnl_matrix* m) {
  const std::size_t c = lnl_matrix_dim(m);
  std::vector<double> v(c * c);
  check(lnl_matrix_get(m, v.data()), "reading matrix");
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      std::printf(j == 0 ? "%.4f" : " %.4f", v[i * c + j]);
    }
    std::printf("\n");
  }
}

std::size_t classes_of(const lnl_dataset* d) {
  std::size_t c = 0;
  check(lnl_dataset_shape(d, nullptr, nullptr, &c), "reading dataset shape");
  return c;
}

lnl_loss_kind parse_loss(const std::string& name) {
  if (name == "baseline" || name == "ce") return LNL_LOSS_BASELINE;
  if (name == "forward") return LNL_LOSS_FORWARD;
  if (name == "reweight") return LNL_LOSS_REWEIGHT;
  throw UsageFailure("unknown loss '" + name + "' (expected baseline, forward or reweight)");
}

// Fills `c` from a config section; explicit flags are applied afterwards.
void apply_train_section(const json& section, lnl_train_config& c) {
  c.epochs = section.value("epochs", c.epochs);
  c.batch_size = section.value("batch_size", c.batch_size);
  c.learning_rate = section.value("learning_rate", c.learning_rate);
  c.patience = section.value("patience", c.patience);
  c.dropout = section.value("dropout", c.dropout != 0) ? 1 : 0;
}

struct TrainFlags {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::size_t> patience;
  bool no_dropout = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Maximum epochs");
    cmd->add_option("--batch-size", batch_size, "Minibatch size");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
    cmd->add_flag("--no-dropout", no_dropout, "Disable dropout during training");
  }

  void apply(lnl_train_config& c) const {
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) c.learning_rate = *lr;
    if (patience) c.patience = *patience;
    if (no_dropout) c.dropout = 0;
  }
};

// Splits `data` 8:2 when no separate validation file is given.
std::pair<Dataset, Dataset> train_val(const std::string& data_path, const std::string& val_path, std::uint64_t seed) {
  Dataset data = load_data(data_path);
  if (!val_path.empty()) {
    return {std::move(data), load_data(val_path)};
  }
  lnl_dataset* a = nullptr;
  lnl_dataset* b = nullptr;
  check(lnl_dataset_split(data.get(), 0.8, seed, &a, &b), "splitting training data");
  return {Dataset(a), Dataset(b)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning with noisy labels: transition-matrix estimation and loss correction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lnl_version()));

  std::function<void()> action;

  // gen-data
  Shared gen_shared;
  lnl_blob_spec blob;
  lnl_blob_spec_default(&blob);
  double gen_test_fraction = 0.0;
  std::string gen_name = "data";
  auto* gen = app.add_subcommand("gen-data", "Generate a Gaussian blob dataset");
  add_shared(gen, gen_shared);
  gen->add_option("--classes", blob.classes, "Number of classes")->capture_default_str();
  gen->add_option("--dim", blob.dim, "Feature dimension")->capture_default_str();
  gen->add_option("--n-per-class", blob.n_per_class, "Samples per class")->capture_default_str();
  gen->add_option("--separation", blob.separation, "Distance between class means in units of sigma")
      ->capture_default_str();
  gen->add_option("--sigma", blob.sigma, "Per-coordinate noise scale")->capture_default_str();
  gen->add_option("--test-fraction", gen_test_fraction, "Also write a held-out split of this fraction");
  gen->add_option("--name", gen_name, "Base file name")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      const json cfg = read_config(gen_shared);
      if (cfg.contains("dataset")) {
        const json& d = cfg.at("dataset");
        if (!gen->count("--classes")) blob.classes = d.value("classes", blob.classes);
        if (!gen->count("--dim")) blob.dim = d.value("dim", blob.dim);
        if (!gen->count("--n-per-class")) blob.n_per_class = d.value("n_per_class", blob.n_per_class);
        if (!gen->count("--separation")) blob.separation = d.value("separation", blob.separation);
        if (!gen->count("--sigma")) blob.sigma = d.value("sigma", blob.sigma);
      }
      blob.seed = gen_shared.seed.value_or(cfg.value("master_seed", std::uint64_t{0}));
      lnl_dataset* d = nullptr;
      check(lnl_dataset_generate(&blob, &d), "generating blobs");
      Dataset data(d);
      if (gen_test_fraction > 0.0) {
        lnl_dataset* a = nullptr;
        lnl_dataset* b = nullptr;
        check(lnl_dataset_split(data.get(), 1.0 - gen_test_fraction, blob.seed + 1, &a, &b), "splitting");
        Dataset train(a), test(b);
        const auto train_path = output_path(gen_shared, gen_name + "_train.txt");
        const auto test_path = output_path(gen_shared, gen_name + "_test.txt");
        check(lnl_dataset_save(train.get(), train_path.c_str()), "saving");
        check(lnl_dataset_save(test.get(), test_path.c_str()), "saving");
        std::printf("wrote %s\nwrote %s\n", train_path.c_str(), test_path.c_str());
      } else {
        const auto path = output_path(gen_shared, gen_name + ".txt");
        check(lnl_dataset_save(data.get(), path.c_str()), "saving");
        std::printf("wrote %s\n", path.c_str());
      }
    };
  });

  // inject
  Shared inj_shared;
  std::string inj_data, inj_matrix, inj_preset, inj_name;
  auto* inj = app.add_subcommand("inject", "Flip labels according to a transition matrix");
  add_shared(inj, inj_shared);
  inj->add_option("--data", inj_data, "Clean dataset file")->required()->check(CLI::ExistingFile);
  auto* inj_m = inj->add_option("--matrix", inj_matrix, "Transition matrix file")->check(CLI::ExistingFile);
  auto* inj_p = inj->add_option("--preset", inj_preset, "identity, circulant:<rate> or symmetric:<rate>");
  inj_m->excludes(inj_p);
  inj->add_option("--name", inj_name, "Output file name (default <data stem>_noisy.txt)");
  inj->callback([&] {
    action = [&] {
      if (inj_matrix.empty() && inj_preset.empty()) {
        throw UsageFailure("inject needs --matrix or --preset");
      }
      Dataset data = load_data(inj_data);
      Matrix t = matrix_from(inj_matrix, inj_preset, classes_of(data.get()), !inj_shared.no_validate);
      lnl_dataset* noisy = nullptr;
      check(lnl_dataset_inject(data.get(), t.get(), inj_shared.seed.value_or(0), &noisy), "injecting noise");
      Dataset out(noisy);
      const std::string name = inj_name.empty() ? fs::path(inj_data).stem().string() + "_noisy.txt" : inj_name;
      const auto path = output_path(inj_shared, name);
      check(lnl_dataset_save(out.get(), path.c_str()), "saving");
      lnl_matrix* flip = nullptr;
      check(lnl_dataset_flip_matrix(out.get(), &flip), "counting flips");
      Matrix empirical(flip);
      std::printf("wrote %s\nempirical flip matrix:\n", path.c_str());
      print_matrix(empirical.get());
    };
  });

  // train
  Shared tr_shared;
  std::string tr_data, tr_val, tr_loss = "baseline", tr_matrix, tr_preset, tr_name = "model.ckpt";
  std::vector<std::size_t> tr_hidden;
  std::optional<double> tr_dropout_rate;
  bool tr_beta_stop = false;
  TrainFlags tr_flags;
  auto* tr = app.add_subcommand("train", "Train a classifier on noisy labels");
  add_shared(tr, tr_shared);
  tr->add_option("--data", tr_data, "Training dataset with noisy labels")->required()->check(CLI::ExistingFile);
  tr->add_option("--val", tr_val, "Validation dataset (default: 8:2 split of --data)")->check(CLI::ExistingFile);
  tr->add_option("--loss", tr_loss, "baseline, forward or reweight")->capture_default_str();
  auto* tr_m = tr->add_option("--matrix", tr_matrix, "Transition matrix file")->check(CLI::ExistingFile);
  tr_m->excludes(tr->add_option("--preset", tr_preset, "Transition matrix preset"));
  tr->add_option("--hidden", tr_hidden, "Hidden layer widths")->delimiter(',');
  tr->add_option("--dropout-rate", tr_dropout_rate, "Dropout probability");
  tr->add_flag("--beta-stop-gradient", tr_beta_stop, "Treat the reweighting factor as a constant");
  tr->add_option("--name", tr_name, "Checkpoint file name")->capture_default_str();
  tr_flags.add(tr);
  tr->callback([&] {
    action = [&] {
      const json cfg = read_config(tr_shared);
      const std::uint64_t seed = tr_shared.seed.value_or(cfg.value("master_seed", std::uint64_t{0}));
      auto [train, val] = train_val(tr_data, tr_val, seed);
      std::size_t n = 0, d = 0, c = 0;
      check(lnl_dataset_shape(train.get(), &n, &d, &c), "reading dataset shape");

      const json model_cfg = cfg.value("model", json::object());
      std::vector<std::size_t> hidden =
          tr_hidden.empty() ? model_cfg.value("hidden", std::vector<std::size_t>{64, 32}) : tr_hidden;
      lnl_mlp_config mc{d, hidden.data(), hidden.size(), c,
                        tr_dropout_rate.value_or(model_cfg.value("dropout", 0.2)), seed};
      lnl_model* init = nullptr;
      check(lnl_model_init(&mc, &init), "initialising model");
      Model start(init);

      lnl_train_config tc;
      lnl_train_config_default(&tc);
      apply_train_section(cfg.value("train", json::object()), tc);
      tr_flags.apply(tc);
      tc.seed = seed;

      const lnl_loss_kind kind = parse_loss(tr_loss);
      Matrix t = matrix_from(tr_matrix, tr_preset, c, !tr_shared.no_validate);
      if (kind != LNL_LOSS_BASELINE && !t) {
        throw UsageFailure("--loss " + tr_loss + " needs --matrix or --preset");
      }
      const auto history = output_path(tr_shared, fs::path(tr_name).stem().string() + "_history.csv");
      lnl_model* trained = nullptr;
      check(lnl_train(start.get(), kind, t.get(), tr_beta_stop ? 1 : 0, tr_shared.no_validate ? 1 : 0, train.get(),
                      val.get(), &tc, history.c_str(), &trained),
            "training");
      Model model(trained);
      const auto path = output_path(tr_shared, tr_name);
      check(lnl_model_save(model.get(), path.c_str()), "saving checkpoint");
      std::printf("wrote %s\nwrote %s\n", path.c_str(), history.c_str());
    };
  });

  // estimate-t
  Shared est_shared;
  std::string est_model, est_data, est_truth, est_name = "t_hat.txt";
  double est_percentile = 97.0;
  std::size_t est_top_k = 1;
  auto* est = app.add_subcommand("estimate-t", "Estimate the transition matrix from anchor points");
  add_shared(est, est_shared);
  est->add_option("--model", est_model, "Checkpoint trained on noisy labels")->required()->check(CLI::ExistingFile);
  est->add_option("--data", est_data, "Dataset to score")->required()->check(CLI::ExistingFile);
  est->add_option("--percentile", est_percentile, "Anchor percentile per class")->capture_default_str();
  est->add_option("--top-k", est_top_k, "Rows averaged around the anchor rank")->capture_default_str();
  est->add_option("--truth", est_truth, "True matrix, to print the RRE")->check(CLI::ExistingFile);
  est->add_option("--name", est_name, "Output matrix file name")->capture_default_str();
  est->callback([&] {
    action = [&] {
      const json cfg = read_config(est_shared);
      if (cfg.contains("anchor")) {
        if (!est->count("--percentile")) est_percentile = cfg["anchor"].value("percentile", est_percentile);
        if (!est->count("--top-k")) est_top_k = cfg["anchor"].value("top_k", est_top_k);
      }
      Model model = load_model(est_model);
      Dataset data = load_data(est_data);
      lnl_matrix* m = nullptr;
      check(lnl_estimate_anchor(model.get(), data.get(), est_percentile, est_top_k, &m), "estimating T");
      Matrix t_hat(m);
      const auto path = output_path(est_shared, est_name);
      check(lnl_matrix_save(t_hat.get(), path.c_str()), "saving matrix");
      print_matrix(t_hat.get());
      if (!est_truth.empty()) {
        Matrix truth = matrix_from(est_truth, "", 0, !est_shared.no_validate);
        double value = 0.0;
        check(lnl_matrix_rre(truth.get(), t_hat.get(), &value), "computing RRE");
        std::printf("rre %.6f\n", value);
      }
      std::printf("wrote %s\n", path.c_str());
    };
  });

  // revise
  Shared rev_shared;
  std::string rev_model, rev_matrix, rev_data, rev_val, rev_mode = "alpha";
  double rev_alpha = 0.01;
  bool rev_beta_stop = false;
  TrainFlags rev_flags;
  auto* rev = app.add_subcommand("revise", "Refine an estimated transition matrix jointly with the classifier");
  add_shared(rev, rev_shared);
  rev->add_option("--model", rev_model, "Starting checkpoint (usually reweight-trained)")
      ->required()
      ->check(CLI::ExistingFile);
  rev->add_option("--matrix", rev_matrix, "Initial estimate T_hat")->required()->check(CLI::ExistingFile);
  rev->add_option("--data", rev_data, "Training dataset with noisy labels")->required()->check(CLI::ExistingFile);
  rev->add_option("--val", rev_val, "Validation dataset (default: 8:2 split of --data)")->check(CLI::ExistingFile);
  rev->add_option("--mode", rev_mode, "alpha or softmax")->capture_default_str();
  rev->add_option("--alpha", rev_alpha, "Slack scale in alpha mode")->capture_default_str();
  rev->add_flag("--beta-stop-gradient", rev_beta_stop, "Treat the reweighting factor as a constant");
  rev_flags.add(rev);
  rev->callback([&] {
    action = [&] {
      const json cfg = read_config(rev_shared);
      const std::uint64_t seed = rev_shared.seed.value_or(cfg.value("master_seed", std::uint64_t{0}));
      lnl_revision_mode mode;
      if (rev_mode == "alpha") {
        mode = LNL_REVISION_ALPHA;
      } else if (rev_mode == "softmax") {
        mode = LNL_REVISION_SOFTMAX;
      } else {
        throw UsageFailure("--mode must be alpha or softmax");
      }
      lnl_train_config tc;
      lnl_revision_config_default(&tc);
      const json section = cfg.value("revision", json::object());
      apply_train_section(section, tc);
      if (!rev->count("--alpha")) rev_alpha = section.value("alpha", rev_alpha);
      rev_flags.apply(tc);
      tc.seed = seed;

      Model start = load_model(rev_model);
      Matrix t_hat = matrix_from(rev_matrix, "", 0, !rev_shared.no_validate);
      auto [train, val] = train_val(rev_data, rev_val, seed);
      const auto history = output_path(rev_shared, "revision_history.csv");
      lnl_model* out_model = nullptr;
      lnl_matrix* out_t = nullptr;
      check(lnl_revise(start.get(), t_hat.get(), train.get(), val.get(), &tc, mode, rev_alpha, rev_beta_stop ? 1 : 0,
                       history.c_str(), &out_model, &out_t),
            "revising");
      Model revised(out_model);
      Matrix t_final(out_t);
      const auto model_path = output_path(rev_shared, "revised.ckpt");
      const auto matrix_path = output_path(rev_shared, "t_revised.txt");
      check(lnl_model_save(revised.get(), model_path.c_str()), "saving checkpoint");
      check(lnl_matrix_save(t_final.get(), matrix_path.c_str()), "saving matrix");
      print_matrix(t_final.get());
      std::printf("wrote %s\nwrote %s\nwrote %s\n", model_path.c_str(), matrix_path.c_str(), history.c_str());
    };
  });

  // eval
  Shared ev_shared;
  std::string ev_model, ev_data, ev_loss = "baseline", ev_matrix, ev_preset;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint against clean labels");
  add_shared(ev, ev_shared);
  ev->add_option("--model", ev_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Test dataset")->required()->check(CLI::ExistingFile);
  ev->add_option("--loss", ev_loss, "Loss to report: baseline, forward or reweight")->capture_default_str();
  auto* ev_m = ev->add_option("--matrix", ev_matrix, "Transition matrix file")->check(CLI::ExistingFile);
  ev_m->excludes(ev->add_option("--preset", ev_preset, "Transition matrix preset"));
  ev->callback([&] {
    action = [&] {
      Model model = load_model(ev_model);
      Dataset data = load_data(ev_data);
      const lnl_loss_kind kind = parse_loss(ev_loss);
      Matrix t = matrix_from(ev_matrix, ev_preset, classes_of(data.get()), !ev_shared.no_validate);
      if (kind != LNL_LOSS_BASELINE && !t) {
        throw UsageFailure("--loss " + ev_loss + " needs --matrix or --preset");
      }
      double loss = 0.0;
      double acc = 0.0;
      check(lnl_evaluate(model.get(), data.get(), kind, t.get(), &loss, &acc), "evaluating");
      std::printf("loss %.6f\naccuracy %.2f\n", loss, acc);
    };
  });

  // experiment
  Shared ex_shared;
  auto* ex = app.add_subcommand("experiment", "Run a multi-seed experiment and write its report");
  add_shared(ex, ex_shared);
  ex->callback([&] {
    action = [&] {
      if (ex_shared.config.empty()) {
        throw UsageFailure("experiment needs --config");
      }
      lnl_experiment_overrides o{};
      o.output_dir = ex->count("--out") ? ex_shared.out.c_str() : nullptr;
      o.has_seed = ex_shared.seed.has_value() ? 1 : 0;
      o.seed = ex_shared.seed.value_or(0);
      o.workers = ex_shared.workers;
      o.fail_fast = ex_shared.fail_fast ? 1 : 0;
      o.no_validate = ex_shared.no_validate ? 1 : 0;
      std::size_t failures = 0;
      check(lnl_experiment_run_file(ex_shared.config.c_str(), &o, &failures), "running experiment");
      if (failures > 0) {
        throw ApiFailure(LNL_ERR_RUNTIME, std::to_string(failures) + " trial(s) failed; see failures.csv");
      }
      std::printf("experiment complete\n");
    };
  });

  // report
  Shared rep_shared;
  auto* rep = app.add_subcommand("report", "Re-aggregate trials.csv and redraw the plots");
  add_shared(rep, rep_shared);
  rep->callback([&] {
    action = [&] {
      check(lnl_report(rep_shared.out.c_str()), "building report");
      std::ifstream summary(fs::path(rep_shared.out) / "summary.csv");
      std::cout << summary.rdbuf();
    };
  });

  // rre
  Shared rre_shared;
  std::string rre_ref, rre_est;
  auto* rre_cmd = app.add_subcommand("rre", "Relative reconstruction error between two matrices");
  add_shared(rre_cmd, rre_shared);
  rre_cmd->add_option("reference", rre_ref, "Reference matrix file")->required()->check(CLI::ExistingFile);
  rre_cmd->add_option("estimate", rre_est, "Estimated matrix file")->required()->check(CLI::ExistingFile);
  rre_cmd->callback([&] {
    action = [&] {
      Matrix a = matrix_from(rre_ref, "", 0, !rre_shared.no_validate);
      Matrix b = matrix_from(rre_est, "", 0, !rre_shared.no_validate);
      double value = 0.0;
      check(lnl_matrix_rre(a.get(), b.get(), &value), "computing RRE");
      std::printf("%.8f\n", value);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    action();
  } catch (const UsageFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ApiFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.status == LNL_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
