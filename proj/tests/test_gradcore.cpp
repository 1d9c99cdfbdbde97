#include <doctest.h>

#include <cmath>
#include <vector>

#include "lnl/errors.hpp"
#include "lnl/rng.hpp"
#include "lnl/tape.hpp"
#include "test_util.hpp"

using namespace lnl;

TEST_CASE("row_softmax of a zero row is uniform") {
  Tape tape;
  const Var z = tape.constant(Tensor::matrix({{0.0, 0.0}}));
  const Tensor p = row_softmax(z).value();
  CHECK(p == Tensor::matrix({{0.5, 0.5}}));
}

TEST_CASE("relu clamps negatives to zero") {
  Tape tape;
  const Var x = tape.constant(Tensor::matrix({{1.0, -0.01}, {0.0, 1.0}}));
  CHECK(relu(x).value() == Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}));
}

TEST_CASE("matmul of all-ones 2x3 and 3x2 gives threes") {
  Tape tape;
  const Var a = tape.constant(Tensor::filled({2, 3}, 1.0));
  const Var b = tape.constant(Tensor::filled({3, 2}, 1.0));
  CHECK(matmul(a, b).value() == Tensor::filled({2, 2}, 3.0));
}

TEST_CASE("apply_primitive dispatches like the named functions") {
  Tape tape;
  const Var a = tape.constant(Tensor::matrix({{1.0, 2.0}, {3.0, 4.0}}));
  const Var b = tape.constant(Tensor::matrix({{0.5, -1.0}, {2.0, 0.25}}));
  const Var pair[] = {a, b};
  const Var one[] = {a};
  CHECK(apply_primitive(Primitive::matmul, pair).value() == matmul(a, b).value());
  CHECK(apply_primitive(Primitive::elementwise_div, pair).value() == elementwise_div(a, b).value());
  CHECK(apply_primitive(Primitive::scalar_mul, one, {.scalar = 3.0, .labels = {}}).value() == scalar_mul(a, 3.0).value());
  CHECK(apply_primitive(Primitive::gather_per_row, one, {.scalar = 0.0, .labels = {1, 0}}).value() == Tensor::vector({2.0, 3.0}));
  CHECK(apply_primitive(Primitive::mean, one).value().item() == 2.5);
  CHECK_THROWS_AS(apply_primitive(Primitive::matmul, one), ContractViolation);
}

TEST_CASE("shape violations are contract violations") {
  Tape tape;
  const Var a = tape.constant(Tensor::zeros({2, 3}));
  const Var b = tape.constant(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ContractViolation);
  CHECK_THROWS_AS(add_broadcast(a, tape.constant(Tensor::zeros({2}))), ContractViolation);
  CHECK_THROWS_AS(elementwise_mul(a, tape.constant(Tensor::zeros({3, 2}))), ContractViolation);
  const int labels[] = {0};
  CHECK_THROWS_AS(gather_per_row(a, labels), ContractViolation);
}

TEST_CASE("domain errors name the primitive and index") {
  Tape tape;
  const Var x = tape.constant(Tensor::vector({1.0, 0.0, 2.0}));
  try {
    (void)log(x);
    FAIL("log(0) did not throw");
  } catch (const DomainError& e) {
    const std::string what = e.what();
    CHECK(what.find("log") != std::string::npos);
    CHECK(what.find('1') != std::string::npos);
  }
  const Var num = tape.constant(Tensor::vector({1.0, 1.0, 1.0}));
  try {
    (void)elementwise_div(num, x);
    FAIL("division by zero did not throw");
  } catch (const DomainError& e) {
    const std::string what = e.what();
    CHECK(what.find("elementwise_div") != std::string::npos);
    CHECK(what.find('1') != std::string::npos);
  }
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({-1.0}))), DomainError);
}

TEST_CASE("gradient of sum is all ones") {
  Tape tape;
  const Var p = tape.parameter("p", Tensor::vector({0.3, -1.0, 2.0}));
  const GradientMap g = tape.backward(sum(p));
  CHECK(g.at("p") == Tensor::vector({1.0, 1.0, 1.0}));
}

TEST_CASE("gradient of mean(p*p) at [2,-2] is [2,-2]") {
  Tape tape;
  const Var p = tape.parameter("p", Tensor::vector({2.0, -2.0}));
  const GradientMap g = tape.backward(mean(elementwise_mul(p, p)));
  CHECK(g.at("p") == Tensor::vector({2.0, -2.0}));
}

TEST_CASE("softmax cross-entropy gradient at zero logits") {
  Tape tape;
  const Var z = tape.parameter("z", Tensor::matrix({{0.0, 0.0, 0.0, 0.0}}));
  const int y[] = {0};
  const Var loss = scalar_mul(sum(log(gather_per_row(row_softmax(z), y))), -1.0);
  const Tensor g = tape.backward(loss).at("z");
  const double expected[] = {-0.75, 0.25, 0.25, 0.25};
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(g[j] == doctest::Approx(expected[j]).epsilon(1e-12));
  }
}

TEST_CASE("backward preconditions") {
  SUBCASE("non-scalar loss") {
    Tape tape;
    const Var p = tape.parameter("p", Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(p), ContractViolation);
  }
  SUBCASE("loss from another tape") {
    Tape a;
    Tape b;
    const Var p = a.parameter("p", Tensor::vector({1.0}));
    CHECK_THROWS_AS(b.backward(sum(p)), UsageError);
  }
  SUBCASE("replay without reset errors instead of double counting") {
    Tape tape;
    const Var p = tape.parameter("p", Tensor::vector({1.0, 2.0}));
    const Var loss = sum(elementwise_mul(p, p));
    const GradientMap first = tape.backward(loss);
    CHECK(first.at("p") == Tensor::vector({2.0, 4.0}));
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
    tape.reset();
    CHECK(tape.size() == 0);
  }
  SUBCASE("unused parameter gets a zero gradient") {
    Tape tape;
    const Var p = tape.parameter("p", Tensor::vector({1.0, 2.0}));
    (void)tape.parameter("q", Tensor::zeros({2, 2}));
    const GradientMap g = tape.backward(sum(p));
    CHECK(g.at("q") == Tensor::zeros({2, 2}));
  }
}

TEST_CASE("gradient accumulates over every path") {
  Tape tape;
  const Var p = tape.parameter("p", Tensor::vector({3.0}));
  // p*p + 2p + p -> d/dp = 2p + 3
  const Var loss = sum(add_broadcast(add_broadcast(elementwise_mul(p, p), scalar_mul(p, 2.0)), p));
  CHECK(tape.backward(loss).at("p")[0] == 9.0);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(41);
  const Tensor w = test::random_tensor(rng, {5, 3});
  const Tensor x = test::random_tensor(rng, {4, 5});
  const int labels[] = {0, 2, 1, 2};
  auto loss_a = [&](Tape& t, Var wv) {
    return mean(scalar_mul(log(gather_per_row(row_softmax(matmul(t.constant(x), wv)), labels)), -1.0));
  };
  auto loss_b = [&](Tape&, Var wv) { return mean(elementwise_mul(wv, wv)); };

  Tape ta;
  const Tensor ga = ta.backward(loss_a(ta, ta.parameter("w", w))).at("w");
  Tape tb;
  const Tensor gb = tb.backward(loss_b(tb, tb.parameter("w", w))).at("w");
  Tape tc;
  const Var wc = tc.parameter("w", w);
  const Tensor gc = tc.backward(add_broadcast(loss_a(tc, wc), loss_b(tc, wc))).at("w");
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(gc[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
  }
}

TEST_CASE("row_softmax rows are positive and sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor z = test::random_tensor(rng, {6, 5});
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] *= 40.0;  // push towards overflow territory
    }
    const Tensor p = row_softmax(tape.constant(z)).value();
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (double v : p.row(r)) {
        CHECK(v > 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("finite_diff_check oracle behaviour") {
  SUBCASE("quadratic is exact to step squared") {
    const double err = finite_diff_check(
        [](Tape&, std::span<const Var> p) { return sum(elementwise_mul(p[0], p[0])); },
        {Tensor::vector({1.5, -0.25, 3.0})}, 1e-5);
    CHECK(err < 1e-6);
  }
  SUBCASE("softmax cross-entropy on a random batch") {
    Rng rng(3);
    const Tensor logits = test::random_tensor(rng, {6, 4});
    const std::vector<int> labels = {0, 3, 1, 1, 2, 0};
    const double err = finite_diff_check(
        [&](Tape&, std::span<const Var> p) {
          return mean(scalar_mul(log(gather_per_row(row_softmax(p[0]), labels)), -1.0));
        },
        {logits}, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("constant loss has zero error") {
    const double err = finite_diff_check(
        [](Tape& t, std::span<const Var>) { return sum(t.constant(Tensor::vector({2.0}))); },
        {Tensor::vector({1.0, 2.0})}, 1e-5);
    CHECK(err == 0.0);
  }
}

TEST_CASE("every primitive passes the finite-difference oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = test::random_tensor(rng, {3, 4});
    const Tensor b = test::random_tensor(rng, {4, 2});
    Tensor positive = test::random_tensor(rng, {3, 4});
    for (std::size_t i = 0; i < positive.size(); ++i) {
      positive[i] = 0.5 + std::abs(positive[i]);
    }
    const Tensor bias = test::random_tensor(rng, {2});
    const std::vector<int> labels = {1, 0, 1};
    const double err = finite_diff_check(
        [&](Tape&, std::span<const Var> p) {
          const Var h = add_broadcast(matmul(p[0], p[1]), p[3]);
          const Var soft = row_softmax(h);
          const Var ratio = elementwise_div(exp(scalar_mul(p[0], 0.3)), p[2]);
          const Var picked = gather_per_row(elementwise_mul(soft, soft), labels);
          return add_broadcast(mean(log(clamp_min(picked, 1e-12))), sum(elementwise_mul(ratio, ratio)));
        },
        {a, b, positive, bias}, 1e-6);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("relu gradient passes through positive entries only") {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({2.0, -1.0, 0.5}));
  CHECK(tape.backward(sum(relu(x))).at("x") == Tensor::vector({1.0, 0.0, 1.0}));
}

TEST_CASE("stop_gradient blocks gradient flow") {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({2.0, 3.0}));
  const Var loss = sum(elementwise_mul(stop_gradient(x), x));
  CHECK(tape.backward(loss).at("x") == Tensor::vector({2.0, 3.0}));
}

TEST_CASE("clamp_min floors values and zeroes the clamped gradient") {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({1e-20, 0.5}));
  const Var c = clamp_min(x, 1e-12);
  CHECK(c.value() == Tensor::vector({1e-12, 0.5}));
  CHECK(tape.backward(sum(c)).at("x") == Tensor::vector({0.0, 1.0}));
}
