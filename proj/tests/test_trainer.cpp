#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "lnl/datagen.hpp"
#include "lnl/errors.hpp"
#include "lnl/trainer.hpp"
#include "test_util.hpp"

using namespace lnl;

namespace {

// Plain re-derivation of the Adam recurrence for a flat parameter vector.
struct ReferenceAdam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1.0 - std::pow(b1, t));
      const double vhat = v[i] / (1.0 - std::pow(b2, t));
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

LabeledDataset noisy_blobs(std::size_t c, std::size_t n_per_class, double separation, const TransitionMatrix& t,
                           std::uint64_t seed) {
  const LabeledDataset clean = generate_blobs(BlobSpec::simplex(c, c, n_per_class, separation, 1.0, seed));
  return inject_noise(clean, t, seed + 1000);
}

MlpConfig mlp_for(std::size_t c, std::uint64_t seed) {
  MlpConfig m;
  m.input_dim = c;
  m.hidden_dims = {16};
  m.classes = c;
  m.dropout_rate = 0.1;
  m.seed = seed;
  return m;
}

TrainConfig quick_train(std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 5e-3;
  t.patience = 5;
  t.seed = seed;
  return t;
}

}  // namespace

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor w = Tensor::vector({0.5, -2.0, 3.0});
    const Tensor before = w;
    AdamState state;
    const NamedTensor params[] = {{"w", &w}};
    GradientMap g;
    g.emplace("w", Tensor::zeros({3}));
    adam_step(state, params, g);
    CHECK(w == before);
    CHECK(state.step == 1);
  }
  SUBCASE("first step on a unit gradient moves by the learning rate") {
    Tensor w = Tensor::vector({0.0});
    AdamState state;
    state.hyper.learning_rate = 0.001;
    const NamedTensor params[] = {{"w", &w}};
    GradientMap g;
    g.emplace("w", Tensor::vector({1.0}));
    adam_step(state, params, g);
    CHECK(w[0] == doctest::Approx(-0.001).epsilon(1e-7));
  }
  SUBCASE("state carries between calls") {
    GradientMap g;
    g.emplace("w", Tensor::vector({0.7}));
    Tensor twice = Tensor::vector({1.0});
    AdamState s1;
    s1.hyper.learning_rate = 0.01;
    const NamedTensor p1[] = {{"w", &twice}};
    adam_step(s1, p1, g);
    g.at("w") = Tensor::vector({-0.2});
    adam_step(s1, p1, g);

    Tensor once = Tensor::vector({1.0});
    AdamState s2;
    s2.hyper.learning_rate = 0.02;
    const NamedTensor p2[] = {{"w", &once}};
    adam_step(s2, p2, g);
    CHECK(twice[0] != once[0]);
  }
  SUBCASE("matches the reference recurrence over 1000 steps") {
    Rng rng(5);
    Tensor w = test::random_tensor(rng, {2, 3});
    Tensor b = test::random_tensor(rng, {3});
    std::vector<double> flat;
    for (std::size_t i = 0; i < w.size(); ++i) flat.push_back(w[i]);
    for (std::size_t i = 0; i < b.size(); ++i) flat.push_back(b[i]);
    ReferenceAdam ref{0.003, 0.9, 0.999, 1e-8, {}, {}};
    AdamState state;
    state.hyper.learning_rate = 0.003;
    const NamedTensor params[] = {{"w", &w}, {"b", &b}};
    double worst = 0.0;
    for (int step = 0; step < 1000; ++step) {
      GradientMap g;
      Tensor gw = test::random_tensor(rng, {2, 3});
      Tensor gb = test::random_tensor(rng, {3}, 0.01);
      std::vector<double> gflat;
      for (std::size_t i = 0; i < gw.size(); ++i) gflat.push_back(gw[i]);
      for (std::size_t i = 0; i < gb.size(); ++i) gflat.push_back(gb[i]);
      g.emplace("w", std::move(gw));
      g.emplace("b", std::move(gb));
      adam_step(state, params, g);
      ref.step(flat, gflat);
      for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(w[i] - flat[i]));
      for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(b[i] - flat[w.size() + i]));
    }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("missing or misshaped gradients") {
    Tensor w = Tensor::vector({1.0, 2.0});
    AdamState state;
    const NamedTensor params[] = {{"w", &w}};
    GradientMap none;
    CHECK_THROWS_AS(adam_step(state, params, none), ContractViolation);
    GradientMap wrong;
    wrong.emplace("w", Tensor::zeros({3}));
    CHECK_THROWS_AS(adam_step(state, params, wrong), ContractViolation);
  }
}

TEST_CASE("EarlyStopping") {
  SUBCASE("patience 1 on 1.0, 0.9, 0.95") {
    EarlyStopping stop(1);
    CHECK(stop.observe(1.0));
    CHECK_FALSE(stop.should_stop());
    CHECK(stop.observe(0.9));
    CHECK_FALSE(stop.should_stop());
    CHECK_FALSE(stop.observe(0.95));
    CHECK(stop.should_stop());
    CHECK(stop.best_epoch() == 2);
    CHECK(stop.best_loss() == 0.9);
  }
  SUBCASE("an equal loss is not an improvement") {
    EarlyStopping stop(2);
    stop.observe(1.0);
    CHECK_FALSE(stop.observe(1.0));
    CHECK_FALSE(stop.should_stop());
    stop.observe(1.0);
    CHECK(stop.should_stop());
    CHECK(stop.best_epoch() == 1);
  }
}

TEST_CASE("train") {
  const TransitionMatrix identity = TransitionMatrix::identity(3);
  const LabeledDataset data = noisy_blobs(3, 200, 8.0, identity, 21);
  const auto [train_set, val_set] = split(data, 0.8, 3);

  SUBCASE("separable blobs without noise reach 99% clean accuracy") {
    const TrainResult r = train(init_mlp(mlp_for(3, 1)), LossSpec::baseline(), train_set, val_set, quick_train(30, 2));
    CHECK(evaluate(r.params, val_set, LossSpec::baseline()).accuracy >= 99.0);
    const auto& h = r.history;
    REQUIRE(h.best_epoch >= 1);
    CHECK(h.epochs[h.best_epoch - 1].train_loss <= h.epochs[0].train_loss);
  }
  SUBCASE("returns the best validation epoch snapshot") {
    TrainConfig cfg = quick_train(25, 4);
    cfg.patience = 2;
    cfg.learning_rate = 0.05;
    const TrainResult r = train(init_mlp(mlp_for(3, 3)), LossSpec::baseline(), train_set, val_set, cfg);
    const auto& h = r.history;
    const auto best = std::min_element(h.epochs.begin(), h.epochs.end(),
                                       [](const EpochRecord& a, const EpochRecord& b) { return a.val_loss < b.val_loss; });
    CHECK(best->epoch == h.best_epoch);
    CHECK(h.best_epoch <= h.stop_epoch);
    CHECK(h.stop_epoch == h.epochs.size());
    CHECK(dataset_loss(r.params, val_set, LossSpec::baseline(), std::nullopt, true) == h.epochs[h.best_epoch - 1].val_loss);
  }
  SUBCASE("deterministic given seed, config and data") {
    const TrainConfig cfg = quick_train(5, 9);
    const TrainResult a = train(init_mlp(mlp_for(3, 2)), LossSpec::baseline(), train_set, val_set, cfg);
    const TrainResult b = train(init_mlp(mlp_for(3, 2)), LossSpec::baseline(), train_set, val_set, cfg);
    CHECK(a.params == b.params);
    CHECK(a.history.batch_losses == b.history.batch_losses);
    REQUIRE(a.history.epochs.size() == b.history.epochs.size());
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
      CHECK(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
      CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    }
  }
  SUBCASE("history csv") {
    test::TempDir dir("hist");
    const TrainResult r = train(init_mlp(mlp_for(3, 2)), LossSpec::baseline(), train_set, val_set, quick_train(3, 1));
    r.history.write_csv(dir / "h.csv");
    std::ifstream in(dir / "h.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_loss,val_loss,val_acc");
    int rows = 0;
    while (std::getline(in, line)) {
      if (!line.empty()) ++rows;
    }
    CHECK(rows == static_cast<int>(r.history.epochs.size()));
  }
  SUBCASE("errors") {
    LabeledDataset empty = val_set;
    empty.features = Tensor::zeros({0, 3});
    empty.clean_labels.clear();
    empty.noisy_labels = std::vector<int>{};
    CHECK_THROWS_AS(train(init_mlp(mlp_for(3, 2)), LossSpec::baseline(), empty, val_set, quick_train(2, 1)),
                    ContractViolation);
    LabeledDataset unlabeled = val_set;
    unlabeled.noisy_labels.reset();
    CHECK_THROWS_AS(train(init_mlp(mlp_for(3, 2)), LossSpec::baseline(), unlabeled, val_set, quick_train(2, 1)),
                    ContractViolation);

    LabeledDataset poisoned = train_set;
    for (std::size_t i = 0; i < poisoned.features.size(); ++i) poisoned.features[i] = std::nan("");
    try {
      (void)train(init_mlp(mlp_for(3, 2)), LossSpec::baseline(), poisoned, val_set, quick_train(2, 1));
      FAIL("expected a non-finite loss error");
    } catch (const std::exception& e) {
      const std::string what = e.what();
      CHECK(what.find("epoch 1") != std::string::npos);
      CHECK(what.find("batch") != std::string::npos);
    }
  }
}

TEST_CASE("evaluate") {
  MlpConfig c;
  c.input_dim = 2;
  c.hidden_dims = {2};
  c.classes = 2;
  c.dropout_rate = 0.0;
  MlpParams p = init_mlp(c);
  p.weights[0] = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  p.weights[1] = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});

  LabeledDataset d;
  d.classes = 2;
  d.features = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {2.0, 0.5}, {0.1, 3.0}});
  d.clean_labels = {0, 1, 0, 1};
  SUBCASE("all correct") {
    CHECK(evaluate(p, d, LossSpec::baseline()).accuracy == 100.0);
  }
  SUBCASE("three of four") {
    d.clean_labels[3] = 0;
    CHECK(evaluate(p, d, LossSpec::baseline()).accuracy == 75.0);
  }
  SUBCASE("scored against clean labels, not noisy ones") {
    d.noisy_labels = std::vector<int>{1, 0, 1, 0};
    CHECK(evaluate(p, d, LossSpec::baseline()).accuracy == 100.0);
  }
  SUBCASE("zero-weight model on a balanced four-class set") {
    const LabeledDataset balanced = generate_blobs(BlobSpec::simplex(4, 4, 25, 3.0, 1.0, 1));
    MlpParams zero = init_mlp(mlp_for(4, 1));
    for (Tensor& w : zero.weights) w = Tensor::zeros(w.shape());
    const EvalResult r = evaluate(zero, balanced, LossSpec::baseline());
    CHECK(r.accuracy == 25.0);
    CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("empty test set") {
    LabeledDataset empty;
    empty.classes = 2;
    empty.features = Tensor::zeros({0, 2});
    CHECK_THROWS_AS(evaluate(p, empty, LossSpec::baseline()), ContractViolation);
  }
}

TEST_CASE("revision pipeline") {
  RevisionPipelineConfig cfg;
  cfg.model = mlp_for(3, 5);
  cfg.base = quick_train(20, 6);
  cfg.revision = TrainConfig::revision_defaults();
  cfg.revision.epochs = 5;
  cfg.revision.seed = 7;
  cfg.settings = {RevisionMode::alpha, 0.01};

  SUBCASE("identity noise on separable blobs") {
    const TransitionMatrix identity = TransitionMatrix::identity(3);
    const auto [tr, va] = split(noisy_blobs(3, 300, 8.0, identity, 31), 0.8, 1);
    const PipelineResult r = revision_pipeline(tr, va, cfg);
    const double before = rre(identity.tensor(), r.t_hat.tensor());
    CHECK(before <= 0.05);
    // Alpha mode does not renormalise rows, so the diagonal may creep above one
    // by a hair; anything beyond 1e-3 would be a real regression.
    CHECK(rre(identity.tensor(), r.stage3.t_final) <= before + 1e-3);
  }
  SUBCASE("zero revision epochs keep T_hat") {
    cfg.revision.epochs = 0;
    const TransitionMatrix t = TransitionMatrix::circulant(3, 0.3);
    const auto [tr, va] = split(noisy_blobs(3, 150, 6.0, t, 32), 0.8, 1);
    const PipelineResult r = revision_pipeline(tr, va, cfg);
    CHECK(r.stage3.t_final == r.t_hat.tensor());
    CHECK(r.stage3.delta == Tensor::zeros({3, 3}));
    CHECK(r.stage3.params == r.stage2.params);
  }
  SUBCASE("circulant truth: alpha revision does not drift away") {
    const TransitionMatrix t = TransitionMatrix::circulant(3, 0.3);
    const auto [tr, va] = split(noisy_blobs(3, 400, 6.0, t, 33), 0.8, 1);
    const PipelineResult r = revision_pipeline(tr, va, cfg);
    CHECK(rre(t.tensor(), r.stage3.t_final) <= rre(t.tensor(), r.t_hat.tensor()) + 0.01);
  }
  SUBCASE("failures carry the stage number") {
    const auto [tr, va] = split(noisy_blobs(3, 50, 6.0, TransitionMatrix::identity(3), 34), 0.8, 1);
    LabeledDataset unlabeled = va;
    unlabeled.noisy_labels.reset();
    try {
      (void)revision_pipeline(tr, unlabeled, cfg);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage() == 1);
      CHECK(std::string(e.what()).rfind("stage 1: ", 0) == 0);
    }
  }
}

TEST_CASE("softmax-mode revision never yields a negative batch loss") {
  const TransitionMatrix t = TransitionMatrix::symmetric(3, 0.4);
  const auto [tr, va] = split(noisy_blobs(3, 200, 4.0, t, 41), 0.8, 2);
  const TrainResult base = train(init_mlp(mlp_for(3, 1)), LossSpec::baseline(), tr, va, quick_train(5, 1));
  TrainConfig rc = TrainConfig::revision_defaults();
  rc.epochs = 10;
  rc.batch_size = 16;
  rc.learning_rate = 0.01;
  const RevisionOutcome r = revise(base.params, t, tr, va, rc, {RevisionMode::softmax, 0.01});
  REQUIRE_FALSE(r.history.batch_losses.empty());
  for (double loss : r.history.batch_losses) {
    CHECK(loss >= 0.0);
  }
}
