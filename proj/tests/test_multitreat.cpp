#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/multitreat.hpp"
#include "dbsc/variance.hpp"
#include "dbsc/weights.hpp"
#include "helpers.hpp"

using namespace dbsc;

TEST_CASE("binomial coefficients are exact and guard against overflow") {
  CHECK(binomial(5, 2) == 10);
  CHECK(binomial(8, 3) == 56);
  CHECK(binomial(10, 0) == 1);
  CHECK(binomial(52, 5) == 2598960);
  CHECK_THROWS_AS(binomial(200, 100), validation_error);
}

TEST_CASE("subset enumeration is lexicographic and indexable") {
  const SubsetIndex index = enumerate_subsets(5, 2);
  REQUIRE(index.size() == 10);
  CHECK(index.subsets.front() == std::vector<int>{0, 1});
  CHECK(index.subsets[1] == std::vector<int>{0, 2});
  CHECK(index.subsets.back() == std::vector<int>{3, 4});
  CHECK(index.find({1, 3}) == 5);
  CHECK(index.find({0, 4}) == 3);
  CHECK(index.find({2, 2}) == -1);
  CHECK(index.contains_unit(6, 1));
  CHECK(index.contains_unit(6, 4));
  CHECK_FALSE(index.contains_unit(6, 0));
}

TEST_CASE("enumeration caps name the computed size and the limit") {
  try {
    enumerate_subsets(10, 3, 100);
    FAIL("expected a validation error");
  } catch (const validation_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("C(10, 3) = 120") != std::string::npos);
    CHECK(msg.find("100") != std::string::npos);
  }
  CHECK_THROWS_AS(enumerate_subsets(10, 3, 0), validation_error);
  CHECK_NOTHROW(enumerate_subsets(10, 3, 120));
}

TEST_CASE("subset rows keep the contrast structure and balance over the draw") {
  const Panel panel = testutil::random_panel(501, 6, 7);
  const int t = 6, n_treated = 2;
  const MultiWeightTensor mt = solve_multi_weights(panel, n_treated, PeriodScope::single(t));
  const int k_slices = mt.slice_of(t);
  const auto& w = mt.w[static_cast<std::size_t>(k_slices)];
  const auto& intercepts = mt.intercepts[static_cast<std::size_t>(k_slices)];
  const int k_count = mt.index.size();
  REQUIRE(k_count == 15);
  CHECK(mt.kkt <= 1e-8);

  for (int k = 0; k < k_count; ++k) {
    double control_sum = 0.0;
    for (int j = 0; j < 6; ++j) {
      if (mt.index.contains_unit(k, j)) {
        CHECK(w(k, j) == doctest::Approx(1.0 / n_treated).epsilon(1e-12));
      } else {
        CHECK(w(k, j) <= 1e-9);
        control_sum += w(k, j);
      }
    }
    CHECK(control_sum == doctest::Approx(-1.0).epsilon(1e-9));
  }

  // Uniformly drawing the treated subset wipes out every outcome column and the
  // intercepts, which is exactly the design unbiasedness constraint.
  for (int j = 0; j < 6; ++j) CHECK(std::abs(w.col(j).sum()) <= 1e-8);
  CHECK(std::abs(intercepts.sum()) <= 1e-8);
}

TEST_CASE("a single treated unit reduces to the one-unit machinery") {
  const Panel panel = testutil::random_panel(502, 5, 6);
  const int t = 5;
  const MultiWeightTensor mt = solve_multi_weights(panel, 1, PeriodScope::single(t));
  WeightSetSpec spec;
  spec.family = WeightFamily::musc;
  const WeightTensor single = solve_weights(panel, spec, PeriodScope::single(t));

  for (int i = 0; i < 5; ++i) {
    const Estimate multi = multi_gsc_estimate(panel, mt, {i}, t);
    const Estimate one = gsc_estimate(panel, single, {i, t});
    CHECK(multi.value == doctest::Approx(one.value).epsilon(1e-7));
    const double vm = multi_unbiased_variance_estimate(panel, mt, {i}, t);
    const double v1 = unbiased_variance_estimate(panel, single, {i, t});
    CHECK(vm == doctest::Approx(v1).epsilon(1e-6));
  }
}

TEST_CASE("subset estimates are unbiased over the uniform subset draw") {
  const Panel panel = testutil::random_panel(503, 6, 8);
  const int t = 7;
  for (int n_treated : {2, 3}) {
    const MultiWeightTensor mt = solve_multi_weights(panel, n_treated, PeriodScope::single(t));
    double mean_error = 0.0;
    for (int k = 0; k < mt.index.size(); ++k)
      mean_error += multi_gsc_estimate(panel, mt, mt.index.subsets[static_cast<std::size_t>(k)], t).value;
    mean_error /= static_cast<double>(mt.index.size());
    CHECK(std::abs(mean_error) <= 1e-9);
  }
}

TEST_CASE("the subset variance estimate averages back to the exact variance") {
  const Panel panel = testutil::random_panel(504, 6, 7);
  const int t = 6, n_treated = 2;
  const MultiWeightTensor mt = solve_multi_weights(panel, n_treated, PeriodScope::single(t));
  const double exact = multi_exact_variance(panel.y, mt, t);

  for (const bool leave_fold_out : {false, true}) {
    double mean_estimate = 0.0;
    for (int k = 0; k < mt.index.size(); ++k)
      mean_estimate += multi_unbiased_variance_estimate(
          panel, mt, mt.index.subsets[static_cast<std::size_t>(k)], t, leave_fold_out);
    mean_estimate /= static_cast<double>(mt.index.size());
    CHECK(mean_estimate == doctest::Approx(exact).epsilon(1e-10));
  }
}

TEST_CASE("treated unit lists are validated and order independent") {
  const Panel panel = testutil::random_panel(505, 5, 6);
  const int t = 5;
  const MultiWeightTensor mt = solve_multi_weights(panel, 2, PeriodScope::single(t));
  const Estimate sorted_units = multi_gsc_estimate(panel, mt, {1, 3}, t);
  const Estimate reversed = multi_gsc_estimate(panel, mt, {3, 1}, t);
  CHECK(sorted_units.value == reversed.value);
  CHECK_THROWS_AS(multi_gsc_estimate(panel, mt, {1}, t), validation_error);
  CHECK_THROWS_AS(multi_gsc_estimate(panel, mt, {1, 1}, t), validation_error);
  CHECK_THROWS_AS(multi_gsc_estimate(panel, mt, {1, 9}, t), validation_error);
}

TEST_CASE("variance estimation needs two spare control units") {
  const Panel panel = testutil::random_panel(506, 5, 6);
  const MultiWeightTensor mt = solve_multi_weights(panel, 2, PeriodScope::single(5));
  CHECK_THROWS_AS(multi_unbiased_variance_estimate(panel, mt, {0, 1}, 5), validation_error);
}

TEST_CASE("multi weight json carries the subsets and slices") {
  const Panel panel = testutil::random_panel(507, 5, 5);
  const MultiWeightTensor mt = solve_multi_weights(panel, 2, PeriodScope::single(4));
  const auto j = nlohmann::json::parse(multi_weights_to_json(mt));
  CHECK(j["n_treated"] == 2);
  CHECK(j["subsets"].size() == 10);
  CHECK(j["units"].size() == 5);
}
