#include <gtest/gtest.h>

#include "capsroute/capsroute.hpp"

using namespace capsroute;

namespace {

std::pair<LabeledDataset, MasterMatrix> setup(double noise) {
  PlantedSpec s;
  s.classes = 4;
  s.n_lower = 32;
  s.dim = 8;
  s.per_class_train = 10;
  s.per_class_test = 5;
  s.noise = noise;
  s.seed = 44;
  auto [train, test] = generate_planted(s);
  return {test, build_master(train, RoutingConfig{}, BuilderConfig{})};
}

}  // namespace

TEST(Bench, MultiplyAddCounts) {
  EXPECT_EQ(dynamic_multiply_adds(1152, 10, 16, 3), 6ULL * 1152 * 10 * 16);
  EXPECT_EQ(fast_multiply_adds(1152, 10, 16), 1152ULL * 10 * 16);
  EXPECT_EQ(analytic_flop_ratio(1152, 10, 16, 3), 6.0);
  EXPECT_EQ(analytic_flop_ratio(7, 3, 2, 1), 2.0);
}

TEST(Bench, Percentile) {
  EXPECT_EQ(detail::percentile({3, 1, 2}, 0.5), 2.0);
  EXPECT_EQ(detail::percentile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_EQ(detail::percentile({5}, 0.95), 5.0);
  EXPECT_NEAR(detail::percentile({0, 10}, 0.95), 9.5, 1e-12);
}

TEST(Bench, NoiseFreeReportIsConsistent) {
  const auto [test, master] = setup(0.0);
  const auto r = run_benchmark(test, master, RoutingConfig{}, 3, 2);
  EXPECT_EQ(r.dynamic.examples, test.size());
  EXPECT_EQ(r.fast.repeats, 3u);
  EXPECT_EQ(r.fast.agreement_rate, 1.0);
  EXPECT_EQ(r.dynamic.accuracy, 1.0);
  EXPECT_EQ(r.fast.accuracy, 1.0);
  EXPECT_TRUE(r.dynamic.outputs_stable);
  EXPECT_TRUE(r.fast.outputs_stable);
  EXPECT_EQ(r.analytic_flop_ratio, 6.0);
  EXPECT_EQ(r.dynamic.multiply_adds_per_example, 6ULL * 32 * 4 * 8);
  EXPECT_GT(r.dynamic.wall_time_total_s, 0.0);
  EXPECT_GT(r.fast.throughput_examples_per_s, 0.0);
  EXPECT_LE(r.fast.per_example_p50_us, r.fast.per_example_p95_us);
}

TEST(Bench, FastIsNotSlowerThanOneIteration) {
  const auto [test, master] = setup(0.1);
  RoutingConfig one;
  one.iterations = 1;
  const auto r = run_benchmark(test, master, one, 5, 1);
  EXPECT_EQ(r.analytic_flop_ratio, 2.0);
  // Generous slack for scheduler noise on shared machines.
  EXPECT_LE(r.fast.wall_time_total_s, 1.5 * r.dynamic.wall_time_total_s);
}

TEST(Bench, Errors) {
  const auto [test, master] = setup(0.1);
  EXPECT_THROW(run_benchmark(test, master, RoutingConfig{}, 2), ValidationError);
  auto narrow = master;
  narrow.values = Matrix(31, 4, 0.5);
  EXPECT_THROW(run_benchmark(test, narrow, RoutingConfig{}, 3), DimensionError);
  RoutingConfig bad;
  bad.iterations = 0;
  EXPECT_THROW(run_benchmark(test, master, bad, 3), ValidationError);
}
