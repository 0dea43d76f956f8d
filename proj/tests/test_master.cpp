#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "capsroute/analysis.hpp"
#include "capsroute/master.hpp"
#include "capsroute/synth.hpp"
#include "reference.hpp"

using namespace capsroute;

namespace {

Matrix mat(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Matrix(rows, cols, std::move(v));
}

LabeledDataset small_planted(std::uint64_t seed, std::size_t per_class, double noise = 0.1) {
  PlantedSpec spec;
  spec.classes = 4;
  spec.n_lower = 24;
  spec.dim = 8;
  spec.per_class_train = per_class;
  spec.per_class_test = 0;
  spec.noise = noise;
  spec.seed = seed;
  return generate_planted(spec).first;
}

}  // namespace

TEST(AccumulateContainers, SingleExamplePerClass) {
  const std::vector<Matrix> ms{mat(2, 2, {1, 2, 3, 4}), mat(2, 2, {5, 6, 7, 8})};
  const std::vector<std::uint32_t> labels{0, 1};
  const auto c = accumulate_containers(ms, labels, 2);
  EXPECT_EQ(c.matrices[0], ms[0]);
  EXPECT_EQ(c.matrices[1], ms[1]);
  EXPECT_EQ(c.class_counts, (std::vector<std::uint64_t>{1, 1}));
}

TEST(AccumulateContainers, HandSum) {
  const std::vector<Matrix> ms{mat(2, 2, {1, 2, 3, 4}), mat(2, 2, {0.5, 0.5, 1, -1})};
  const std::vector<std::uint32_t> labels{0, 0};
  const auto c = accumulate_containers(ms, labels, 2);
  EXPECT_EQ(c.matrices[0], mat(2, 2, {1.5, 2.5, 4, 3}));
  EXPECT_EQ(c.matrices[1], Matrix(2, 2, 0.0));
  EXPECT_EQ(c.class_counts, (std::vector<std::uint64_t>{2, 0}));
}

TEST(AccumulateContainers, DuplicationDoubles) {
  const std::vector<Matrix> ms{mat(1, 2, {0.25, 1}), mat(1, 2, {0.5, 0.125})};
  const std::vector<std::uint32_t> labels{1, 0};
  std::vector<Matrix> twice = ms;
  twice.insert(twice.end(), ms.begin(), ms.end());
  std::vector<std::uint32_t> twice_labels{1, 0, 1, 0};
  const auto a = accumulate_containers(ms, labels, 2);
  const auto b = accumulate_containers(twice, twice_labels, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(b.class_counts[k], 2 * a.class_counts[k]);
    for (std::size_t e = 0; e < 2; ++e) {
      EXPECT_EQ(b.matrices[k].data()[e], 2 * a.matrices[k].data()[e]);
    }
  }
}

TEST(AccumulateContainers, Errors) {
  const std::vector<Matrix> ms{Matrix(2, 2), Matrix(2, 3)};
  const std::vector<std::uint32_t> ok{0, 1}, bad{0, 5};
  EXPECT_THROW(accumulate_containers(ms, ok, 2), DimensionError);
  const std::vector<Matrix> same{Matrix(2, 2), Matrix(2, 2)};
  EXPECT_THROW(accumulate_containers(same, bad, 2), ValidationError);
}

TEST(FinalizeContainers, AverageThenMaxMin) {
  ClassContainers c{{mat(1, 3, {2, 4, 6})}, {2}};
  const auto f = finalize_containers(c, BuilderConfig{});
  EXPECT_EQ(f.matrices[0], mat(1, 3, {0, 0.5, 1}));
}

TEST(FinalizeContainers, DegenerateRowMidpoint) {
  ClassContainers c{{mat(2, 2, {3, 3, 1, 2})}, {1}};
  const auto f = finalize_containers(c, BuilderConfig{});
  EXPECT_EQ(f.matrices[0](0, 0), 0.5);
  EXPECT_EQ(f.matrices[0](0, 1), 0.5);
}

TEST(FinalizeContainers, MissingClassNamesTheClass) {
  ClassContainers c{{Matrix(1, 2, 1.0), Matrix(1, 2, 0.0)}, {1, 0}};
  try {
    finalize_containers(c, BuilderConfig{});
    FAIL() << "expected a missing-class error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
  }
}

TEST(FinalizeContainers, SoftmaxNearUniformInputsStayNearUniform) {
  // Per-example Softmax coefficients clustered around 1/N_j stay there after
  // averaging and Softmax renormalization.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> wobble(-0.01, 0.01);
  std::vector<Matrix> ms;
  std::vector<std::uint32_t> labels;
  for (int n = 0; n < 50; ++n) {
    Matrix m(8, 10);
    for (double& v : m.data()) v = 0.1 + wobble(rng);
    ms.push_back(m);
    labels.push_back(static_cast<std::uint32_t>(n % 10));
  }
  BuilderConfig cfg;
  cfg.norm_kind = NormKind::Softmax;
  const auto f = finalize_containers(accumulate_containers(ms, labels, 10), cfg);
  for (const auto& m : f.matrices) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double sum = 0;
      for (double v : m.row(i)) {
        EXPECT_NEAR(v, 0.1, 0.005);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(ReduceToMaster, HandTransfer) {
  ClassContainers c{{mat(2, 2, {.1, .9, .2, .8}), mat(2, 2, {.3, .7, .4, .6})}, {1, 1}};
  const auto m = reduce_to_master(c, BuilderConfig{});
  EXPECT_EQ(m.values, mat(2, 2, {.1, .7, .2, .6}));
}

TEST(ReduceToMaster, IdenticalContainersReproduceContainer) {
  const Matrix a = mat(2, 3, {.1, .5, .9, .2, .4, .6});
  ClassContainers c{{a, a, a}, {1, 1, 1}};
  EXPECT_EQ(reduce_to_master(c, BuilderConfig{}).values, a);
}

TEST(ReduceToMaster, UnusedColumnsNeutralAndTooManyClassesThrow) {
  ClassContainers c{{mat(1, 3, {.2, .4, .6})}, {1}};
  const auto m = reduce_to_master(c, BuilderConfig{});
  EXPECT_EQ(m.values, mat(1, 3, {.2, .5, .5}));

  ClassContainers too_many{{Matrix(1, 1), Matrix(1, 1)}, {1, 1}};
  EXPECT_THROW(reduce_to_master(too_many, BuilderConfig{}), DimensionError);
}

TEST(FilterExamples, NoneAndFullRetentionAreIdentity) {
  const std::vector<std::vector<double>> gt{{1, 2, 3}, {3, 1, 2}, {1, 1, 2}, {0, 5, 1}};
  const std::vector<std::uint32_t> labels{0, 1, 0, 1};
  const std::vector<std::size_t> all{0, 1, 2, 3};
  EXPECT_EQ(filter_examples(gt, labels, 2, FilterSpec::none()), all);
  EXPECT_EQ(filter_examples(gt, labels, 2, FilterSpec::similarity(1.0)), all);
}

TEST(FilterExamples, SimilarityDropsAntiCorrelated) {
  const std::vector<double> x{0.1, 0.9, 0.4, 0.7};
  std::vector<double> anti;
  for (double v : x) anti.push_back(1.0 - v);
  const std::vector<std::vector<double>> gt{x, x, anti};
  const std::vector<std::uint32_t> labels{0, 0, 0};
  EXPECT_EQ(filter_examples(gt, labels, 1, FilterSpec::similarity(0.67)),
            (std::vector<std::size_t>{0, 1}));
}

TEST(FilterExamples, ClusteringDropsOutlier) {
  std::vector<std::vector<double>> gt;
  std::vector<std::uint32_t> labels;
  for (int n = 0; n < 10; ++n) {
    gt.push_back({1.0 + 0.01 * n, 0.0, 1.0});
    labels.push_back(0);
  }
  gt[6] = {-5.0, 9.0, -3.0};
  const auto kept = filter_examples(gt, labels, 1, FilterSpec::clustering(0.1, 3));
  EXPECT_EQ(kept.size(), 9u);
  EXPECT_EQ(std::find(kept.begin(), kept.end(), 6u), kept.end());

  // With k=2 the outlier may own a cluster; only the drop count is fixed.
  const auto kept2 = filter_examples(gt, labels, 1, FilterSpec::clustering(0.1, 3, 2));
  EXPECT_EQ(kept2.size(), 9u);
}

TEST(FilterExamples, EmptyingAClassIsAnError) {
  const std::vector<std::vector<double>> gt{{1, 2}, {2, 1}};
  const std::vector<std::uint32_t> labels{0, 1};
  EXPECT_THROW(filter_examples(gt, labels, 2, FilterSpec::clustering(1.0, 1)), ValidationError);
  EXPECT_THROW(filter_examples(gt, labels, 2, FilterSpec::similarity(0.2)), ValidationError);
  EXPECT_THROW(filter_examples(gt, labels, 3, FilterSpec::similarity(1.0)), ValidationError);
  EXPECT_THROW(FilterSpec::similarity(0.0).validate(), ValidationError);
  EXPECT_THROW(FilterSpec::clustering(1.5, 0).validate(), ValidationError);
}

TEST(FilterExamples, SimilarityIsMonotoneInKeepFraction) {
  const auto data = small_planted(5, 12, 0.5);
  const auto routed = route_dataset(data, RoutingConfig{});
  std::vector<std::vector<double>> gt;
  for (std::size_t n = 0; n < data.size(); ++n) {
    gt.push_back(routed.coefficients[n].column(data.examples[n].label));
  }
  const auto labels = data.labels();
  std::vector<std::size_t> previous;
  for (double keep : {0.25, 0.5, 0.75, 1.0}) {
    const auto kept = filter_examples(gt, labels, 4, FilterSpec::similarity(keep));
    EXPECT_TRUE(std::includes(kept.begin(), kept.end(), previous.begin(), previous.end()));
    previous = kept;
  }
}

TEST(BuildMaster, OneExamplePerClass) {
  const auto data = small_planted(21, 1);
  const auto master = build_master(data, RoutingConfig{}, BuilderConfig{});
  for (const auto& e : data.examples) {
    const auto c = dynamic_route(e.predictions, RoutingConfig{}).last_coefficients();
    const auto renorm = normalize_rows(c.values, NormSpec{});
    for (std::size_t i = 0; i < data.n_lower; ++i) {
      EXPECT_EQ(master.values(i, e.label), renorm.values(i, e.label));
    }
  }
}

TEST(BuildMaster, PermutationInvariant) {
  const auto data = small_planted(3, 6);
  auto shuffled = data;
  std::mt19937_64 rng(8);
  std::shuffle(shuffled.examples.begin(), shuffled.examples.end(), rng);
  const auto a = build_master(data, RoutingConfig{}, BuilderConfig{});
  const auto b = build_master(shuffled, RoutingConfig{}, BuilderConfig{});
  for (std::size_t k = 0; k < a.values.data().size(); ++k) {
    EXPECT_NEAR(a.values.data()[k], b.values.data()[k], 1e-9);
  }
}

TEST(BuildMaster, BoundsCountsAndProvenance) {
  const auto data = small_planted(4, 10, 0.3);
  BuilderConfig cfg;
  cfg.filter = FilterSpec::similarity(0.8);
  const auto m = build_master(data, RoutingConfig{}, cfg);
  for (double v : m.values.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  std::uint64_t total = 0;
  for (auto c : m.class_counts) total += c;
  EXPECT_EQ(total, 4u * 8u);
  EXPECT_EQ(m.source_digest, dataset_digest(data));

  const auto again = build_master(data, RoutingConfig{}, cfg);
  EXPECT_EQ(again.values, m.values);
  EXPECT_EQ(again.class_counts, m.class_counts);
}

TEST(BuildMaster, ClusteringFilterIsSeedDeterministic) {
  const auto data = small_planted(6, 10, 0.4);
  BuilderConfig cfg;
  cfg.filter = FilterSpec::clustering(0.2, 99, 2);
  const auto a = build_master(data, RoutingConfig{}, cfg);
  const auto b = build_master(data, RoutingConfig{}, cfg);
  EXPECT_EQ(a.values, b.values);
  std::uint64_t total = 0;
  for (auto c : a.class_counts) total += c;
  EXPECT_EQ(total, 4u * 8u);
}

TEST(BuildMaster, ExtractIterationSelectable) {
  const auto data = small_planted(7, 3);
  BuilderConfig cfg;
  cfg.extract_iteration = 1;
  const auto first = build_master(data, RoutingConfig{}, cfg);
  cfg.extract_iteration = 3;
  const auto last = build_master(data, RoutingConfig{}, cfg);
  EXPECT_EQ(last.values, build_master(data, RoutingConfig{}, BuilderConfig{}).values);
  cfg.extract_iteration = 4;
  EXPECT_THROW(build_master(data, RoutingConfig{}, cfg), ValidationError);
  (void)first;
}

TEST(BuildMaster, MissingClassFails) {
  auto data = small_planted(8, 2);
  std::erase_if(data.examples, [](const LabeledExample& e) { return e.label == 2; });
  EXPECT_THROW(build_master(data, RoutingConfig{}, BuilderConfig{}), ValidationError);
}

TEST(BuildMaster, PlantedMasterColumnsMatchTheirClass) {
  const auto data = small_planted(10, 20);
  const auto m = build_master(data, RoutingConfig{}, BuilderConfig{});
  const auto routed = route_dataset(data, RoutingConfig{});
  const auto corr = master_class_correlations(m.values, routed.coefficients, data.labels(), 4);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      if (a != b) {
        EXPECT_GT(corr.values(a, a), corr.values(a, b));
      }
    }
  }
}

TEST(GroundTruthOnlyMaster, HandExample) {
  // Two class-0 examples and one class-1 example, 2 rows x 2 classes.
  const std::vector<Matrix> ms{mat(2, 2, {1.0, 0.0, 0.2, 0.6}), mat(2, 2, {0.6, 0.1, 0.4, 0.0}),
                               mat(2, 2, {0.3, 0.5, 0.9, 0.1})};
  const std::vector<std::uint32_t> labels{0, 0, 1};
  // Column means: class 0 = (0.8, 0.3), class 1 = (0.5, 0.1); row-wise Max-Min.
  const auto m = ground_truth_only_master(ms, labels, 2, BuilderConfig{});
  EXPECT_EQ(m.values, mat(2, 2, {1.0, 0.0, 1.0, 0.0}));
  EXPECT_EQ(m.class_counts, (std::vector<std::uint64_t>{2, 1}));
}

TEST(ReplicateMaster, SlicesAreBitwiseCopies) {
  MasterMatrix m;
  m.values = mat(2, 2, {0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(replicate_master(m, 1).batch(), 1u);
  const auto four = replicate_master(m, 4);
  ASSERT_EQ(four.batch(), 4u);
  for (const auto& s : four.slices) EXPECT_EQ(s, m.values);
  EXPECT_THROW(replicate_master(m, 0), ValidationError);
}

TEST(ReplicateMaster, BatchFastRouteEqualsLoop) {
  const auto data = small_planted(12, 3);
  const auto m = build_master(data, RoutingConfig{}, BuilderConfig{});
  std::vector<PredictionTensor> batch;
  for (const auto& e : data.examples) batch.push_back(e.predictions);
  const auto out = fast_route_batch(batch, replicate_master(m, batch.size()));
  for (std::size_t n = 0; n < batch.size(); ++n) EXPECT_EQ(out[n], fast_route(batch[n], m));
  EXPECT_THROW(fast_route_batch(batch, replicate_master(m, 2)), DimensionError);
}
