#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lnl/errors.hpp"
#include "lnl/losses.hpp"
#include "lnl/rng.hpp"
#include "test_util.hpp"

using namespace lnl;

namespace {

Tensor log_probs(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t = Tensor::matrix(rows);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = std::log(t[i]);
  }
  return t;
}

double loss_value(const std::function<Var(Tape&)>& build) {
  Tape tape;
  return build(tape).value().item();
}

const TransitionMatrix kCirculant = TransitionMatrix::circulant(4, 0.3);

}  // namespace

TEST_CASE("ce_loss examples") {
  SUBCASE("confident correct prediction") {
    const double v = loss_value([](Tape& t) {
      const int y[] = {2};
      return ce_loss(t.constant(Tensor::matrix({{-50.0, -50.0, 50.0, -50.0}})), y);
    });
    CHECK(v >= 0.0);
    CHECK(v < 1e-12);
  }
  SUBCASE("zero logits give ln 4") {
    const double v = loss_value([](Tape& t) {
      const int y[] = {1, 3};
      return ce_loss(t.constant(Tensor::zeros({2, 4})), y);
    });
    CHECK(v == doctest::Approx(1.386294).epsilon(1e-6));
    CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }
  SUBCASE("p(label) = 0.5 and 0.25") {
    const double v = loss_value([](Tape& t) {
      const int y[] = {0, 0};
      return ce_loss(t.constant(log_probs({{0.5, 0.5 / 3, 0.5 / 3, 0.5 / 3}, {0.25, 0.25, 0.25, 0.25}})), y);
    });
    CHECK(v == doctest::Approx(1.039721).epsilon(1e-6));
  }
  SUBCASE("out-of-range label") {
    Tape tape;
    const int y[] = {4};
    CHECK_THROWS_AS(ce_loss(tape.constant(Tensor::zeros({1, 4})), y), ContractViolation);
    const int neg[] = {-1};
    CHECK_THROWS_AS(ce_loss(tape.constant(Tensor::zeros({1, 4})), neg), ContractViolation);
  }
}

TEST_CASE("forward_corrected_loss examples") {
  const Tensor g = log_probs({{0.7, 0.1, 0.1, 0.1}});
  const int y0[] = {0};
  SUBCASE("circulant 0.3, label 0") {
    const double v = loss_value([&](Tape& t) { return forward_corrected_loss(t.constant(g), y0, kCirculant); });
    CHECK(v == doctest::Approx(-std::log(0.52)).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.653926).epsilon(1e-6));
  }
  SUBCASE("uniform rows give ln 4 whatever the prediction") {
    const TransitionMatrix uniform(Tensor::filled({4, 4}, 0.25));
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
      const Tensor logits = test::random_tensor(rng, {3, 4}, 3.0);
      const auto labels = test::random_labels(rng, 3, 4);
      const double v = loss_value([&](Tape& t) { return forward_corrected_loss(t.constant(logits), labels, uniform); });
      CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
  }
  SUBCASE("non-stochastic matrix is rejected unless bypassed") {
    const TransitionMatrix bad(Tensor::matrix({{0.9, 0.3}, {0.0, 1.0}}));
    const Tensor logits = Tensor::zeros({1, 2});
    Tape tape;
    CHECK_THROWS_AS(forward_corrected_loss(tape.constant(logits), y0, bad), ValidationError);
    CHECK_NOTHROW(forward_corrected_loss(tape.constant(logits), y0, bad, true));
  }
  SUBCASE("dimension mismatch") {
    Tape tape;
    CHECK_THROWS_AS(forward_corrected_loss(tape.constant(g), y0, TransitionMatrix::identity(3)), ContractViolation);
  }
}

TEST_CASE("reweighted_loss examples") {
  const int y0[] = {0};
  SUBCASE("circulant 0.3, label 0") {
    const Tensor g = log_probs({{0.7, 0.1, 0.1, 0.1}});
    const double v = loss_value([&](Tape& t) { return reweighted_loss(t.constant(g), y0, kCirculant); });
    const double beta = 0.7 / 0.52;
    CHECK(beta == doctest::Approx(1.346154).epsilon(1e-6));
    CHECK(v == doctest::Approx(beta * -std::log(0.7)).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.480139).epsilon(1e-6));
  }
  SUBCASE("uniform posterior with a doubly stochastic matrix gives beta = 1") {
    const Tensor logits = Tensor::zeros({1, 4});
    const double rw = loss_value([&](Tape& t) { return reweighted_loss(t.constant(logits), y0, kCirculant); });
    const double ce = loss_value([&](Tape& t) { return ce_loss(t.constant(logits), y0); });
    CHECK(rw == doctest::Approx(ce).epsilon(1e-15));
  }
  SUBCASE("zero denominator names the sample") {
    // Column 0 of T is zero, so (T^T g)[0] = 0 for any g.
    const TransitionMatrix t(Tensor::matrix({{0.0, 1.0}, {0.0, 1.0}}));
    Tape tape;
    const int y[] = {1, 0};
    try {
      (void)reweighted_loss(tape.constant(Tensor::zeros({2, 2})), y, t);
      FAIL("expected a domain error");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
    }
  }
}

TEST_CASE("revision_loss examples") {
  SUBCASE("zero delta in alpha mode matches reweighting with T_hat") {
    Rng rng(17);
    for (int i = 0; i < 10; ++i) {
      const Tensor logits = test::random_tensor(rng, {5, 4});
      const auto labels = test::random_labels(rng, 5, 4);
      const TransitionMatrix t_hat(test::random_stochastic(rng, 4));
      const double rev = loss_value([&](Tape& t) {
        return revision_loss(t.constant(logits), labels, t_hat, t.parameter("delta", Tensor::zeros({4, 4})),
                             {RevisionMode::alpha, 0.01});
      });
      const double rw = loss_value([&](Tape& t) { return reweighted_loss(t.constant(logits), labels, t_hat); });
      CHECK(rev == rw);
    }
  }
  SUBCASE("softmax mode with a zero T_hat and uniform g gives ln 2") {
    const TransitionMatrix zero(Tensor::zeros({2, 2}));
    const int y[] = {1};
    const double v = loss_value([&](Tape& t) {
      return revision_loss(t.constant(Tensor::zeros({1, 2})), y, zero, t.parameter("delta", Tensor::zeros({2, 2})),
                           {RevisionMode::softmax, 0.01});
    });
    CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("delta shape must match") {
    Tape tape;
    const int y[] = {0};
    CHECK_THROWS_AS(revision_loss(tape.constant(Tensor::zeros({1, 4})), y, kCirculant,
                                  tape.parameter("delta", Tensor::zeros({3, 3})), {}),
                    ContractViolation);
  }
  SUBCASE("alpha must be positive") {
    Tape tape;
    const int y[] = {0};
    CHECK_THROWS_AS(revision_loss(tape.constant(Tensor::zeros({1, 4})), y, kCirculant,
                                  tape.parameter("delta", Tensor::zeros({4, 4})), {RevisionMode::alpha, 0.0}),
                    ContractViolation);
  }
}

TEST_CASE("softmax-mode revision loss is never negative") {
  Rng rng(2024);
  for (int i = 0; i < 500; ++i) {
    const std::size_t c = 2 + rng.below(5);
    const std::size_t n = 1 + rng.below(8);
    const Tensor logits = test::random_tensor(rng, {n, c}, 1.0 + 5.0 * rng.uniform());
    const auto labels = test::random_labels(rng, n, c);
    // T_hat need not be stochastic here; the softmax makes T_eff so.
    const TransitionMatrix t_hat(test::random_tensor(rng, {c, c}, 2.0));
    const Tensor delta = test::random_tensor(rng, {c, c}, 3.0);
    const double v = loss_value([&](Tape& t) {
      return revision_loss(t.constant(logits), labels, t_hat, t.parameter("delta", delta),
                           {RevisionMode::softmax, 0.01});
    });
    CHECK(v >= 0.0);
  }
}

TEST_CASE("identity matrix reduces corrections to cross-entropy bit-exactly") {
  Rng rng(11);
  const TransitionMatrix eye = TransitionMatrix::identity(4);
  for (int i = 0; i < 100; ++i) {
    const Tensor logits = test::random_tensor(rng, {8, 4}, 2.0);
    const auto labels = test::random_labels(rng, 8, 4);
    const double ce = loss_value([&](Tape& t) { return ce_loss(t.constant(logits), labels); });
    CHECK(loss_value([&](Tape& t) { return forward_corrected_loss(t.constant(logits), labels, eye); }) == ce);
    CHECK(loss_value([&](Tape& t) { return reweighted_loss(t.constant(logits), labels, eye); }) == ce);
  }
}

// Step 1e-5 keeps central-difference roundoff well below the tolerance even
// for the alpha-scaled delta gradients.
TEST_CASE("every loss passes the finite-difference check") {
  Rng rng(123);
  auto instance = [&](std::size_t& n, std::size_t& c) {
    n = 1 + rng.below(8);
    c = 2 + rng.below(5);
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 0, c = 0;
    instance(n, c);
    const std::size_t d = 1 + rng.below(6);
    const Tensor x = test::random_tensor(rng, {n, d});
    const Tensor w = test::random_tensor(rng, {d, c});
    const auto labels = test::random_labels(rng, n, c);
    const TransitionMatrix t(test::random_stochastic(rng, c));
    const Tensor delta = test::random_tensor(rng, {c, c}, 0.5);

    auto logits = [&](Tape& tape, Var wv) { return matmul(tape.constant(x), wv); };
    CAPTURE(trial);
    CHECK(finite_diff_check([&](Tape& tp, std::span<const Var> p) { return ce_loss(logits(tp, p[0]), labels); },
                            {w}, 1e-5) <= 1e-4);
    CHECK(finite_diff_check(
              [&](Tape& tp, std::span<const Var> p) { return forward_corrected_loss(logits(tp, p[0]), labels, t); },
              {w}, 1e-5) <= 1e-4);
    CHECK(finite_diff_check(
              [&](Tape& tp, std::span<const Var> p) { return reweighted_loss(logits(tp, p[0]), labels, t); },
              {w}, 1e-5) <= 1e-4);
    for (RevisionMode mode : {RevisionMode::alpha, RevisionMode::softmax}) {
      CAPTURE(revision_mode_name(mode));
      // Both the classifier weights and delta are differentiated.
      CHECK(finite_diff_check(
                [&](Tape& tp, std::span<const Var> p) {
                  return revision_loss(logits(tp, p[0]), labels, t, p[1], {mode, 0.01});
                },
                {w, delta}, 1e-5) <= 1e-4);
    }
  }
}

TEST_CASE("beta stop-gradient drops the weight's own derivative") {
  // With beta frozen, the gradient equals beta times the CE gradient.
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = test::random_tensor(rng, {1, 4});
    const int y[] = {static_cast<int>(rng.below(4))};
    const TransitionMatrix t(test::random_stochastic(rng, 4));

    Tape a;
    const Var la = a.parameter("z", logits);
    const Var loss = reweighted_loss(la, y, t, true);
    const Tensor g_stop = a.backward(loss).at("z");

    Tape b;
    const Var lb = b.parameter("z", logits);
    const Tensor g_ce = b.backward(ce_loss(lb, y)).at("z");

    Tape c;
    const Var gvals = row_softmax(c.constant(logits));
    const double g_y = gvals.value()[static_cast<std::size_t>(y[0])];
    double noisy = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      noisy += t(i, static_cast<std::size_t>(y[0])) * gvals.value()[i];
    }
    const double beta = g_y / noisy;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(g_stop[j] == doctest::Approx(beta * g_ce[j]).epsilon(1e-12));
    }

    // And the stopped gradient passes the oracle once beta is held fixed.
    const double err = finite_diff_check(
        [&](Tape&, std::span<const Var> p) {
          return scalar_mul(ce_loss(p[0], y), beta);
        },
        {logits}, 1e-6);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("losses are equivariant under class relabelling") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 4;
    const std::size_t n = 6;
    const Tensor logits = test::random_tensor(rng, {n, c});
    const auto labels = test::random_labels(rng, n, c);
    const Tensor t = test::random_stochastic(rng, c);
    const Tensor delta = test::random_tensor(rng, {c, c}, 0.5);

    std::vector<std::size_t> pi(c);
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    for (std::size_t i = c - 1; i > 0; --i) {
      std::swap(pi[i], pi[rng.below(i + 1)]);
    }
    Tensor logits_p = Tensor::zeros({n, c});
    std::vector<int> labels_p(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        logits_p(r, pi[j]) = logits(r, j);
      }
      labels_p[r] = static_cast<int>(pi[static_cast<std::size_t>(labels[r])]);
    }
    Tensor t_p = Tensor::zeros({c, c});
    Tensor delta_p = Tensor::zeros({c, c});
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        t_p(pi[i], pi[j]) = t(i, j);
        delta_p(pi[i], pi[j]) = delta(i, j);
      }
    }
    const TransitionMatrix tm(t), tm_p(t_p);
    auto both = [&](auto&& f) {
      const double a = loss_value([&](Tape& tp) { return f(tp, logits, labels, tm, delta); });
      const double b = loss_value([&](Tape& tp) { return f(tp, logits_p, labels_p, tm_p, delta_p); });
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    };
    both([](Tape& tp, const Tensor& z, const std::vector<int>& y, const TransitionMatrix&, const Tensor&) {
      return ce_loss(tp.constant(z), y);
    });
    both([](Tape& tp, const Tensor& z, const std::vector<int>& y, const TransitionMatrix& m, const Tensor&) {
      return forward_corrected_loss(tp.constant(z), y, m);
    });
    both([](Tape& tp, const Tensor& z, const std::vector<int>& y, const TransitionMatrix& m, const Tensor&) {
      return reweighted_loss(tp.constant(z), y, m);
    });
    for (RevisionMode mode : {RevisionMode::alpha, RevisionMode::softmax}) {
      both([mode](Tape& tp, const Tensor& z, const std::vector<int>& y, const TransitionMatrix& m, const Tensor& d) {
        return revision_loss(tp.constant(z), y, m, tp.parameter("delta", d), {mode, 0.01});
      });
    }
  }
}

TEST_CASE("loss spec invariants") {
  CHECK_NOTHROW(LossSpec::baseline().check());
  CHECK_NOTHROW(LossSpec::forward(kCirculant).check());
  CHECK_NOTHROW(LossSpec::revision(kCirculant, RevisionMode::softmax).check());

  LossSpec missing;
  missing.kind = LossKind::forward;
  CHECK_THROWS_AS(missing.check(), ContractViolation);

  LossSpec extra = LossSpec::baseline();
  extra.matrix = kCirculant;
  CHECK_THROWS_AS(extra.check(), ContractViolation);

  LossSpec no_mode = LossSpec::revision(kCirculant, RevisionMode::alpha);
  no_mode.revision_mode.reset();
  CHECK_THROWS_AS(no_mode.check(), ContractViolation);

  CHECK(parse_loss_kind("reweight") == LossKind::reweight);
  CHECK_THROWS_AS(parse_loss_kind("backward"), ContractViolation);
}

TEST_CASE("compute_loss dispatches on the spec") {
  Rng rng(4);
  const Tensor logits = test::random_tensor(rng, {4, 4});
  const auto labels = test::random_labels(rng, 4, 4);
  const double direct = loss_value([&](Tape& t) { return reweighted_loss(t.constant(logits), labels, kCirculant); });
  const double via = loss_value([&](Tape& t) { return compute_loss(LossSpec::reweight(kCirculant), t.constant(logits), labels); });
  CHECK(direct == via);
  Tape tape;
  CHECK_THROWS_AS(compute_loss(LossSpec::revision(kCirculant, RevisionMode::alpha), tape.constant(logits), labels),
                  ContractViolation);
}
