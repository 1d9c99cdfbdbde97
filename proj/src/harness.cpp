#include "lnl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lnl/errors.hpp"
#include "lnl/rng.hpp"

namespace lnl {

using nlohmann::json;

namespace {

constexpr Method kAllMethods[] = {Method::baseline,        Method::forward,        Method::reweight,
                                  Method::anchor_estimate, Method::revision_alpha, Method::revision_softmax};

// Sub-seed streams derived from a trial seed.
enum Stream : std::uint64_t {
  kSplit = 10,
  kStage1Init = 20,
  kStage1Train = 21,
  kForwardInit = 30,
  kForwardTrain = 31,
  kReweightInit = 40,
  kReweightTrain = 41,
  kStage2Init = 50,
  kStage2Train = 51,
  kStage3Train = 60,
};

// Streams derived from the master seed for data preparation.
enum DataStream : std::uint64_t { kBlobs = 1, kTestSplit = 2, kNoise = 3 };

TransitionMatrix matrix_from_json(const json& value, std::size_t classes, const std::filesystem::path& base) {
  if (value.is_string()) {
    return TransitionMatrix::preset(value.get<std::string>(), classes);
  }
  if (value.is_object() && value.contains("file")) {
    std::filesystem::path p = value.at("file").get<std::string>();
    if (p.is_relative() && !base.empty()) {
      p = base / p;
    }
    return load_matrix(p, false);
  }
  if (value.is_array()) {
    const auto rows = value.get<std::vector<std::vector<double>>>();
    std::vector<double> flat;
    for (const auto& r : rows) {
      if (r.size() != rows.size()) {
        throw ContractViolation("inline matrix must be square");
      }
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return TransitionMatrix(rows.size(), std::move(flat));
  }
  throw ContractViolation("matrix must be a preset string, a nested array or {\"file\": path}");
}

json matrix_to_json(const TransitionMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.dim(); ++i) {
    const auto r = m.tensor().row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

void read_train_config(const json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.patience = j.value("patience", c.patience);
  c.dropout = j.value("dropout", c.dropout);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
}

json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},   {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"patience", c.patience}, {"dropout", c.dropout},     {"beta1", c.beta1},
          {"beta2", c.beta2},     {"epsilon", c.epsilon}};
}

}  // namespace

const char* method_name(Method method) {
  switch (method) {
    case Method::baseline: return "baseline";
    case Method::forward: return "forward";
    case Method::reweight: return "reweight";
    case Method::anchor_estimate: return "anchor_estimate";
    case Method::revision_alpha: return "revision_alpha";
    case Method::revision_softmax: return "revision_softmax";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : kAllMethods) {
    if (name == method_name(m)) {
      return m;
    }
  }
  throw ContractViolation("unknown method '" + name + "'");
}

bool ExperimentConfig::wants(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

void ExperimentConfig::check() const {
  if (trials < 1) {
    throw ContractViolation("experiment needs at least one trial");
  }
  if (methods.empty()) {
    throw ContractViolation("experiment needs at least one method");
  }
  if (workers < 1) {
    throw ContractViolation("workers must be >= 1");
  }
  if (dataset.kind == DatasetSource::Kind::blobs && !true_t) {
    throw ContractViolation("blob experiments need true_t to inject label noise");
  }
  if (dataset.kind == DatasetSource::Kind::blobs && !(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
    throw ContractViolation("test_fraction must be in (0, 1)");
  }
  const bool needs_t = wants(Method::forward) || wants(Method::reweight);
  const bool has_estimate = wants(Method::anchor_estimate) || wants(Method::revision_alpha) ||
                            wants(Method::revision_softmax);
  if (needs_t && !true_t && !prior_t && !has_estimate) {
    throw ContractViolation("forward/reweight need a T source: true_t, prior_t or an anchor-estimating method");
  }
  train.check();
  revision.check(true);
  if (!(alpha > 0.0)) {
    throw ContractViolation("alpha must be positive");
  }
  if (validate_matrices) {
    for (const auto* m : {&true_t, &prior_t}) {
      if (*m) {
        (void)(*m)->validated();
      }
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("experiment config", 1, e.what());
  }
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      const std::string kind = d.value("kind", "blobs");
      if (kind == "blobs") {
        c.dataset.kind = DatasetSource::Kind::blobs;
      } else if (kind == "files") {
        c.dataset.kind = DatasetSource::Kind::files;
      } else {
        throw ContractViolation("dataset.kind must be 'blobs' or 'files'");
      }
      c.dataset.name = d.value("name", kind);
      c.dataset.classes = d.value("classes", c.dataset.classes);
      c.dataset.dim = d.value("dim", c.dataset.dim);
      c.dataset.n_per_class = d.value("n_per_class", c.dataset.n_per_class);
      c.dataset.separation = d.value("separation", c.dataset.separation);
      c.dataset.sigma = d.value("sigma", c.dataset.sigma);
      c.dataset.test_fraction = d.value("test_fraction", c.dataset.test_fraction);
      auto resolve = [&](const std::string& p) {
        std::filesystem::path path = p;
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
      };
      if (d.contains("train")) c.dataset.train_path = resolve(d.at("train").get<std::string>());
      if (d.contains("test")) c.dataset.test_path = resolve(d.at("test").get<std::string>());
    }
    if (j.contains("true_t")) c.true_t = matrix_from_json(j.at("true_t"), c.dataset.classes, base_dir);
    if (j.contains("prior_t")) c.prior_t = matrix_from_json(j.at("prior_t"), c.dataset.classes, base_dir);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) {
        c.methods.push_back(parse_method(m.get<std::string>()));
      }
    }
    c.trials = j.value("trials", c.trials);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("model")) {
      const json& m = j.at("model");
      c.hidden_dims = m.value("hidden", c.hidden_dims);
      c.dropout_rate = m.value("dropout", c.dropout_rate);
    }
    if (j.contains("train")) read_train_config(j.at("train"), c.train);
    if (j.contains("revision")) {
      const json& r = j.at("revision");
      read_train_config(r, c.revision);
      c.alpha = r.value("alpha", c.alpha);
      c.beta_stop_gradient = r.value("beta_stop_gradient", c.beta_stop_gradient);
      c.renormalize_alpha = r.value("renormalize_alpha", c.renormalize_alpha);
      const std::string init = r.value("init", std::string("averaged"));
      if (init != "averaged" && init != "per_trial") {
        throw ContractViolation("revision.init must be 'averaged' or 'per_trial'");
      }
      c.average_anchor_for_revision = init == "averaged";
    }
    if (j.contains("anchor")) {
      c.anchor.percentile = j.at("anchor").value("percentile", c.anchor.percentile);
      c.anchor.top_k = j.at("anchor").value("top_k", c.anchor.top_k);
    }
    if (j.contains("output_dir")) {
      std::filesystem::path out = j.at("output_dir").get<std::string>();
      c.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
    }
    c.validate_matrices = j.value("validate_matrices", c.validate_matrices);
    c.workers = j.value("workers", c.workers);
    c.fail_fast = j.value("fail_fast", c.fail_fast);
  } catch (const json::exception& e) {
    throw ParseError("experiment config", 1, e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str(), path.parent_path());
}

std::string experiment_config_json(const ExperimentConfig& c) {
  json d = {{"kind", c.dataset.kind == DatasetSource::Kind::blobs ? "blobs" : "files"},
            {"name", c.dataset.name},
            {"classes", c.dataset.classes}};
  if (c.dataset.kind == DatasetSource::Kind::blobs) {
    d["dim"] = c.dataset.dim;
    d["n_per_class"] = c.dataset.n_per_class;
    d["separation"] = c.dataset.separation;
    d["sigma"] = c.dataset.sigma;
    d["test_fraction"] = c.dataset.test_fraction;
  } else {
    d["train"] = c.dataset.train_path.string();
    d["test"] = c.dataset.test_path.string();
  }
  json methods = json::array();
  for (Method m : c.methods) {
    methods.push_back(method_name(m));
  }
  json revision = train_config_json(c.revision);
  revision["alpha"] = c.alpha;
  revision["beta_stop_gradient"] = c.beta_stop_gradient;
  revision["renormalize_alpha"] = c.renormalize_alpha;
  revision["init"] = c.average_anchor_for_revision ? "averaged" : "per_trial";
  revision["nominal_learning_rate"] = 5e-7;
  json j = {{"dataset", d},
            {"methods", methods},
            {"trials", c.trials},
            {"master_seed", c.master_seed},
            {"model", {{"hidden", c.hidden_dims}, {"dropout", c.dropout_rate}}},
            {"train", train_config_json(c.train)},
            {"revision", revision},
            {"anchor", {{"percentile", c.anchor.percentile}, {"top_k", c.anchor.top_k}}},
            {"output_dir", c.output_dir.string()},
            {"validate_matrices", c.validate_matrices},
            {"workers", c.workers},
            {"fail_fast", c.fail_fast}};
  if (c.true_t) j["true_t"] = matrix_to_json(*c.true_t);
  if (c.prior_t) j["prior_t"] = matrix_to_json(*c.prior_t);
  return j.dump(2) + "\n";
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  const DatasetSource& src = config.dataset;
  if (src.kind == DatasetSource::Kind::blobs) {
    const BlobSpec spec = BlobSpec::simplex(src.classes, src.dim, src.n_per_class, src.separation, src.sigma,
                                            mix_seed(config.master_seed, kBlobs));
    auto [pool, test] = split(generate_blobs(spec), 1.0 - src.test_fraction, mix_seed(config.master_seed, kTestSplit));
    pool = inject_noise(pool, *config.true_t, mix_seed(config.master_seed, kNoise));
    test.noisy_labels.reset();
    return {std::move(pool), std::move(test)};
  }
  LabeledDataset pool = load_dataset(src.train_path);
  LabeledDataset test = load_dataset(src.test_path);
  if (pool.classes != test.classes || pool.dim() != test.dim()) {
    throw ContractViolation("train and test files disagree on dimension or class count");
  }
  if (!pool.noisy_labels) {
    if (!config.true_t) {
      throw ContractViolation("training file has no noisy labels and no true_t is given to inject them");
    }
    pool = inject_noise(pool, *config.true_t, mix_seed(config.master_seed, kNoise));
  }
  return {std::move(pool), std::move(test)};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct TrialOutput {
  std::vector<TrialResult> results;
  std::vector<TrialFailure> failures;
  std::optional<TransitionMatrix> anchor_estimate;
};

class TrialRunner {
 public:
  TrialRunner(const ExperimentConfig& config, const ExperimentData& data) : config_(config), data_(data) {}

  std::uint64_t seed_of(std::size_t trial) const { return config_.master_seed + trial; }

  MlpConfig model_config(std::uint64_t seed) const {
    MlpConfig m;
    m.input_dim = data_.pool.dim();
    m.hidden_dims = config_.hidden_dims;
    m.classes = data_.pool.classes;
    m.dropout_rate = config_.dropout_rate;
    m.seed = seed;
    return m;
  }

  TrainConfig train_config(const TrainConfig& base, std::uint64_t seed) const {
    TrainConfig c = base;
    c.seed = seed;
    return c;
  }

  std::pair<LabeledDataset, LabeledDataset> trial_split(std::uint64_t seed) const {
    return split(data_.pool, 0.8, mix_seed(seed, kSplit));
  }

  TrialResult scored(Method method, std::uint64_t seed, const MlpParams& params, Clock::time_point start) const {
    const EvalResult eval = evaluate(params, data_.test, LossSpec::baseline());
    TrialResult r{method, config_.dataset.name, seed, eval.loss, eval.accuracy, {}, 0.0, {}, {}};
    r.wall_time_seconds = seconds_since(start);
    return r;
  }

  void attach_matrix(TrialResult& r, Tensor matrix) const {
    if (config_.true_t) {
      r.rre = rre(config_.true_t->tensor(), matrix);
    }
    r.matrix = std::move(matrix);
  }

  template <class Body>
  void guarded(TrialOutput& out, Method method, std::uint64_t seed, Body&& body) const {
    try {
      body();
    } catch (const std::exception& e) {
      if (config_.fail_fast) {
        throw;
      }
      out.failures.push_back({method, seed, e.what()});
    }
  }

  // Stage-1 classifier, baseline scoring and the per-trial anchor estimate.
  TrialOutput phase_one(std::size_t trial) const {
    TrialOutput out;
    const std::uint64_t seed = seed_of(trial);
    const bool need_stage1 = config_.wants(Method::baseline) || config_.wants(Method::anchor_estimate) ||
                             config_.wants(Method::revision_alpha) || config_.wants(Method::revision_softmax) ||
                             ((config_.wants(Method::forward) || config_.wants(Method::reweight)) &&
                              !config_.true_t && !config_.prior_t);
    if (!need_stage1) {
      return out;
    }
    const auto [train_set, val_set] = trial_split(seed);
    const auto start = Clock::now();
    std::optional<TrainResult> stage1;
    guarded(out, Method::baseline, seed, [&] {
      stage1 = train(init_mlp(model_config(mix_seed(seed, kStage1Init))), LossSpec::baseline(), train_set, val_set,
                     train_config(config_.train, mix_seed(seed, kStage1Train)));
    });
    if (!stage1) {
      if (config_.wants(Method::anchor_estimate)) {
        out.failures.push_back({Method::anchor_estimate, seed, "stage 1 classifier failed"});
      }
      return out;
    }
    if (config_.wants(Method::baseline)) {
      TrialResult r = scored(Method::baseline, seed, stage1->params, start);
      r.histories.emplace_back("train", stage1->history);
      out.results.push_back(std::move(r));
    }
    guarded(out, Method::anchor_estimate, seed, [&] {
      TransitionMatrix estimate = estimate_transition(stage1->params, train_set, config_.anchor);
      if (config_.wants(Method::anchor_estimate)) {
        TrialResult r = scored(Method::anchor_estimate, seed, stage1->params, start);
        attach_matrix(r, estimate.tensor());
        out.results.push_back(std::move(r));
      }
      out.anchor_estimate = std::move(estimate);
    });
    return out;
  }

  // Forward, reweight and revision methods given the chosen T sources.
  TrialOutput phase_two(std::size_t trial, const std::optional<TransitionMatrix>& correction,
                        const std::optional<TransitionMatrix>& revision_start) const {
    TrialOutput out;
    const std::uint64_t seed = seed_of(trial);
    const auto [train_set, val_set] = trial_split(seed);

    auto correction_matrix = [&]() -> const TransitionMatrix& {
      if (!correction) {
        throw std::runtime_error("no transition matrix available for loss correction");
      }
      return *correction;
    };
    auto with_validation = [&](LossSpec spec) {
      spec.skip_validation = !config_.validate_matrices;
      return spec;
    };

    if (config_.wants(Method::forward)) {
      guarded(out, Method::forward, seed, [&] {
        const auto start = Clock::now();
        TrainResult fit = train(init_mlp(model_config(mix_seed(seed, kForwardInit))),
                                with_validation(LossSpec::forward(correction_matrix())), train_set, val_set,
                                train_config(config_.train, mix_seed(seed, kForwardTrain)));
        TrialResult r = scored(Method::forward, seed, fit.params, start);
        r.histories.emplace_back("train", std::move(fit.history));
        out.results.push_back(std::move(r));
      });
    }

    std::optional<TrainResult> reweighted;
    if (config_.wants(Method::reweight)) {
      guarded(out, Method::reweight, seed, [&] {
        const auto start = Clock::now();
        LossSpec spec = with_validation(LossSpec::reweight(correction_matrix()));
        spec.beta_stop_gradient = config_.beta_stop_gradient;
        reweighted = train(init_mlp(model_config(mix_seed(seed, kReweightInit))), spec, train_set, val_set,
                           train_config(config_.train, mix_seed(seed, kReweightTrain)));
        TrialResult r = scored(Method::reweight, seed, reweighted->params, start);
        r.histories.emplace_back("train", reweighted->history);
        out.results.push_back(std::move(r));
      });
    }

    const Method revision_methods[] = {Method::revision_alpha, Method::revision_softmax};
    const bool any_revision = config_.wants(Method::revision_alpha) || config_.wants(Method::revision_softmax);
    if (!any_revision) {
      return out;
    }
    if (!revision_start) {
      for (Method m : revision_methods) {
        if (config_.wants(m)) {
          out.failures.push_back({m, seed, "no anchor estimate available to start revision"});
        }
      }
      return out;
    }

    // Stage 2: reuse the reweight model when it was trained under the same matrix.
    const auto stage2_start = Clock::now();
    std::optional<TrainResult> stage2;
    if (reweighted && correction && *correction == *revision_start) {
      stage2 = reweighted;
    } else {
      for (Method m : revision_methods) {
        if (!config_.wants(m) || stage2) {
          continue;
        }
        guarded(out, m, seed, [&] {
          LossSpec spec = LossSpec::reweight(*revision_start);
          spec.beta_stop_gradient = config_.beta_stop_gradient;
          spec.skip_validation = true;
          stage2 = train(init_mlp(model_config(mix_seed(seed, kStage2Init))), spec, train_set, val_set,
                         train_config(config_.train, mix_seed(seed, kStage2Train)));
        });
      }
    }
    const double stage2_seconds = seconds_since(stage2_start);
    if (!stage2) {
      return out;
    }

    for (Method m : revision_methods) {
      if (!config_.wants(m)) {
        continue;
      }
      guarded(out, m, seed, [&] {
        const auto start = Clock::now();
        const RevisionSettings settings{m == Method::revision_alpha ? RevisionMode::alpha : RevisionMode::softmax,
                                        config_.alpha};
        RevisionOutcome revised =
            revise(stage2->params, *revision_start, train_set, val_set,
                   train_config(config_.revision, mix_seed(seed, kStage3Train + static_cast<std::uint64_t>(m))),
                   settings, config_.beta_stop_gradient);
        TrialResult r = scored(m, seed, revised.params, start);
        r.wall_time_seconds += stage2_seconds;
        Tensor t_final = settings.mode == RevisionMode::alpha && config_.renormalize_alpha
                             ? renormalize_rows(revised.t_final)
                             : revised.t_final;
        attach_matrix(r, std::move(t_final));
        r.histories.emplace_back("stage2", stage2->history);
        r.histories.emplace_back("stage3", std::move(revised.history));
        out.results.push_back(std::move(r));
      });
    }
    return out;
  }

 private:
  const ExperimentConfig& config_;
  const ExperimentData& data_;
};

template <class Fn>
std::vector<TrialOutput> for_each_trial(std::size_t trials, std::size_t workers, Fn&& fn) {
  std::vector<TrialOutput> outputs(trials);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&] {
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= trials) {
        return;
      }
      try {
        outputs[t] = fn(t);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
        next = trials;
      }
    }
  };
  const std::size_t count = std::min(workers, trials);
  if (count <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < count; ++i) {
      pool.emplace_back(work);
    }
    for (auto& th : pool) {
      th.join();
    }
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }
  return outputs;
}

}  // namespace

ExperimentRun run_experiment(const ExperimentConfig& config) {
  config.check();
  return run_experiment(config, prepare_data(config));
}

ExperimentRun run_experiment(const ExperimentConfig& config, const ExperimentData& data) {
  config.check();
  const TrialRunner runner(config, data);
  ExperimentRun run;
  run.true_t = config.true_t;

  auto absorb = [&](std::vector<TrialOutput>& outputs) {
    for (auto& o : outputs) {
      std::move(o.results.begin(), o.results.end(), std::back_inserter(run.results));
      std::move(o.failures.begin(), o.failures.end(), std::back_inserter(run.failures));
    }
  };

  std::vector<TrialOutput> first = for_each_trial(config.trials, config.workers, [&](std::size_t t) {
    return runner.phase_one(t);
  });

  std::vector<Tensor> estimates;
  for (const auto& o : first) {
    if (o.anchor_estimate) {
      estimates.push_back(o.anchor_estimate->tensor());
    }
  }
  std::optional<TransitionMatrix> averaged;
  if (!estimates.empty()) {
    averaged = TransitionMatrix(mean_matrix(estimates));
  }

  std::vector<TrialOutput> second = for_each_trial(config.trials, config.workers, [&](std::size_t t) {
    const std::optional<TransitionMatrix>& own = first[t].anchor_estimate;
    const std::optional<TransitionMatrix>& estimate = config.average_anchor_for_revision ? averaged : own;
    std::optional<TransitionMatrix> correction = config.true_t ? config.true_t : config.prior_t;
    if (!correction) {
      correction = estimate;
    }
    return runner.phase_two(t, correction, estimate);
  });

  absorb(first);
  absorb(second);
  auto order = [](const auto& a, const auto& b) {
    return std::pair(static_cast<int>(a.method), a.seed) < std::pair(static_cast<int>(b.method), b.seed);
  };
  std::stable_sort(run.results.begin(), run.results.end(), order);
  std::stable_sort(run.failures.begin(), run.failures.end(), order);
  return run;
}

const MethodSummary* ExperimentSummary::find(Method m) const {
  for (const auto& s : methods) {
    if (s.method == m) {
      return &s;
    }
  }
  return nullptr;
}

double sample_mean(const std::vector<double>& values) {
  if (values.empty()) {
    throw ContractViolation("sample_mean: empty group");
  }
  double total = 0.0;
  for (double v : values) {
    total += v;
  }
  return total / static_cast<double>(values.size());
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) {
    if (values.empty()) {
      throw ContractViolation("sample_std: empty group");
    }
    return 0.0;
  }
  const double mu = sample_mean(values);
  double ss = 0.0;
  for (double v : values) {
    ss += (v - mu) * (v - mu);
  }
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

ExperimentSummary aggregate(const std::vector<TrialResult>& results, const std::optional<TransitionMatrix>& true_t) {
  if (results.empty()) {
    throw ContractViolation("aggregate: no results");
  }
  std::map<int, std::vector<const TrialResult*>> groups;
  for (const auto& r : results) {
    groups[static_cast<int>(r.method)].push_back(&r);
  }
  ExperimentSummary summary;
  for (const auto& [key, group] : groups) {
    MethodSummary s;
    s.method = static_cast<Method>(key);
    s.n = group.size();
    std::vector<double> losses, accs, rres;
    std::vector<Tensor> matrices;
    for (const TrialResult* r : group) {
      losses.push_back(r->test_loss);
      accs.push_back(r->test_accuracy);
      if (r->rre) rres.push_back(*r->rre);
      if (r->matrix) matrices.push_back(*r->matrix);
    }
    s.loss_mean = sample_mean(losses);
    s.loss_std = sample_std(losses);
    s.acc_mean = sample_mean(accs);
    s.acc_std = sample_std(accs);
    if (!rres.empty()) {
      s.rre_mean = sample_mean(rres);
      s.rre_std = sample_std(rres);
    }
    if (!matrices.empty()) {
      s.mean_matrix = mean_matrix(matrices);
      if (true_t) {
        s.mean_matrix_rre = rre(true_t->tensor(), *s.mean_matrix);
      }
    }
    summary.methods.push_back(std::move(s));
  }
  return summary;
}

}  // namespace lnl
