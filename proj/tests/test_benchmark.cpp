// Orderings on the reference blob benchmark. Slow: trains every method on
// five seeds.

#include <doctest.h>

#include <optional>

#include "lnl/harness.hpp"

#ifndef LNL_REFERENCE_CONFIG
#define LNL_REFERENCE_CONFIG "configs/reference_benchmark.json"
#endif

using namespace lnl;

namespace {

const ExperimentSummary& summary() {
  static const ExperimentSummary s = [] {
    const ExperimentConfig config = load_experiment_config(LNL_REFERENCE_CONFIG);
    const ExperimentRun run = run_experiment(config);
    REQUIRE(run.failures.empty());
    return aggregate(run.results, run.true_t);
  }();
  return s;
}

const MethodSummary& get(Method m) {
  const MethodSummary* p = summary().find(m);
  REQUIRE(p != nullptr);
  return *p;
}

}  // namespace

TEST_CASE("forward correction is at least as accurate as the baseline") {
  CHECK(get(Method::forward).acc_mean >= get(Method::baseline).acc_mean);
}

TEST_CASE("estimator RRE ordering: alpha <= anchor <= softmax") {
  const double alpha = *get(Method::revision_alpha).rre_mean;
  const double anchor = *get(Method::anchor_estimate).rre_mean;
  const double softmax = *get(Method::revision_softmax).rre_mean;
  CHECK(alpha <= anchor);
  CHECK(anchor <= softmax);
}

TEST_CASE("every estimator's mean matrix is at least as close as its trials on average") {
  for (const MethodSummary& m : summary().methods) {
    if (m.mean_matrix_rre) {
      CAPTURE(method_name(m.method));
      CHECK(*m.mean_matrix_rre <= *m.rre_mean);
    }
  }
}

// Known to fail: the reweighting factor is differentiated by default, and
// fine-tuning under it drives the clean test loss up. See the notes in the
// README under "Known deviations".
TEST_CASE("revision test loss does not exceed reweight test loss" * doctest::should_fail()) {
  const double reweight = get(Method::reweight).loss_mean;
  CHECK(get(Method::revision_alpha).loss_mean <= reweight);
  CHECK(get(Method::revision_softmax).loss_mean <= reweight);
}
