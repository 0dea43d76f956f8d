#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsroute/dataset.hpp"
#include "capsroute/errors.hpp"
#include "capsroute/rng.hpp"
#include "capsroute/routing.hpp"
#include "capsroute/stats.hpp"
#include "capsroute/tensor.hpp"

namespace capsroute {

/// Which training examples contribute to the master coefficients.
struct FilterSpec {
  enum class Kind { None, Clustering, Similarity };

  Kind kind = Kind::None;
  // Clustering: per-class k-means on ground-truth columns, then drop the
  // drop_fraction of examples farthest from their centroid.
  std::size_t clusters = 1;
  double drop_fraction = 0.1;
  std::uint64_t seed = 0;
  // Similarity: keep the keep_fraction of each class with the highest mean
  // Pearson correlation against the rest of its class.
  double keep_fraction = 0.9;

  static FilterSpec none() { return {}; }
  static FilterSpec clustering(double drop, std::uint64_t seed, std::size_t k = 1) {
    FilterSpec f;
    f.kind = Kind::Clustering;
    f.drop_fraction = drop;
    f.seed = seed;
    f.clusters = k;
    return f;
  }
  static FilterSpec similarity(double keep) {
    FilterSpec f;
    f.kind = Kind::Similarity;
    f.keep_fraction = keep;
    return f;
  }

  void validate() const {
    if (kind == Kind::Clustering) {
      if (!(drop_fraction > 0.0 && drop_fraction <= 1.0)) {
        throw ValidationError("clustering drop fraction must lie in (0, 1]");
      }
      if (clusters < 1) throw ValidationError("clustering needs k >= 1");
    }
    if (kind == Kind::Similarity && !(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
      throw ValidationError("similarity keep fraction must lie in (0, 1]");
    }
  }

  bool operator==(const FilterSpec&) const = default;
};

enum class Accumulation {
  FullMatrix,      // containers hold whole per-example matrices
  GroundTruthOnly  // ablation: one container of ground-truth columns only
};

struct BuilderConfig {
  NormKind norm_kind = NormKind::MaxMin;
  double lower_bound = 0.0;
  double upper_bound = 1.0;
  double epsilon = 1e-12;
  FilterSpec filter;
  Accumulation accumulation = Accumulation::FullMatrix;
  // 1-based routing iteration to extract; unset means the last one.
  std::optional<int> extract_iteration;

  NormSpec norm() const { return {norm_kind, lower_bound, upper_bound, epsilon}; }

  void validate() const {
    norm().validate();
    filter.validate();
    if (extract_iteration && *extract_iteration < 1) {
      throw ValidationError("extract iteration is 1-based");
    }
  }

  bool operator==(const BuilderConfig&) const = default;
};

/// Per-class accumulators of full coefficient matrices.
struct ClassContainers {
  std::vector<Matrix> matrices;
  std::vector<std::uint64_t> class_counts;
};

struct MasterMatrix {
  Matrix values;
  BuilderConfig build_config;
  RoutingConfig routing_config;
  std::vector<std::uint64_t> class_counts;
  Digest source_digest{};
};

inline ClassContainers accumulate_containers(std::span<const Matrix> coefficients,
                                             std::span<const std::uint32_t> labels,
                                             std::size_t num_classes) {
  if (coefficients.size() != labels.size()) {
    throw DimensionError("coefficient list and label list differ in length");
  }
  if (num_classes < 1) throw ValidationError("need at least one class");
  if (coefficients.empty()) throw ValidationError("no coefficient matrices to accumulate");
  const std::size_t rows = coefficients.front().rows();
  const std::size_t cols = coefficients.front().cols();
  ClassContainers out{std::vector<Matrix>(num_classes, Matrix(rows, cols, 0.0)),
                      std::vector<std::uint64_t>(num_classes, 0)};
  for (std::size_t n = 0; n < coefficients.size(); ++n) {
    const Matrix& m = coefficients[n];
    if (m.rows() != rows || m.cols() != cols) {
      throw DimensionError("coefficient matrix " + std::to_string(n) + " has a different shape");
    }
    if (labels[n] >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[n]) + " of example " +
                            std::to_string(n) + " is out of range");
    }
    auto dst = out.matrices[labels[n]].data();
    auto src = m.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    ++out.class_counts[labels[n]];
  }
  return out;
}

/// Averages each container by its class count, then normalizes it row-wise.
inline ClassContainers finalize_containers(const ClassContainers& c, const BuilderConfig& config) {
  config.validate();
  ClassContainers out;
  out.class_counts = c.class_counts;
  for (std::size_t k = 0; k < c.matrices.size(); ++k) {
    if (c.class_counts[k] == 0) {
      throw ValidationError("class " + std::to_string(k) + " has no examples");
    }
    Matrix avg = c.matrices[k];
    const double count = static_cast<double>(c.class_counts[k]);
    for (double& v : avg.data()) v /= count;
    out.matrices.push_back(normalize_rows(avg, config.norm()).values);
  }
  return out;
}

/// Copies ground-truth column k of container k into column k of the master.
/// Columns without a class are set to the neutral coefficient.
inline MasterMatrix reduce_to_master(const ClassContainers& finalized,
                                     const BuilderConfig& config) {
  if (finalized.matrices.empty()) throw ValidationError("no containers to reduce");
  const std::size_t rows = finalized.matrices.front().rows();
  const std::size_t cols = finalized.matrices.front().cols();
  const std::size_t num_classes = finalized.matrices.size();
  if (num_classes > cols) {
    throw DimensionError(std::to_string(num_classes) + " classes exceed " +
                         std::to_string(cols) + " coefficient columns");
  }
  MasterMatrix master;
  master.values = Matrix(rows, cols, config.norm().neutral(cols));
  for (std::size_t k = 0; k < num_classes; ++k) {
    const Matrix& container = finalized.matrices[k];
    if (container.rows() != rows || container.cols() != cols) {
      throw DimensionError("container " + std::to_string(k) + " has a different shape");
    }
    for (std::size_t i = 0; i < rows; ++i) master.values(i, k) = container(i, k);
  }
  master.build_config = config;
  master.class_counts = finalized.class_counts;
  return master;
}

/// The rejected ablation: accumulate only ground-truth columns into a single
/// container, average each column by its class count, then normalize rows.
inline MasterMatrix ground_truth_only_master(std::span<const Matrix> coefficients,
                                             std::span<const std::uint32_t> labels,
                                             std::size_t num_classes,
                                             const BuilderConfig& config) {
  config.validate();
  if (coefficients.size() != labels.size()) {
    throw DimensionError("coefficient list and label list differ in length");
  }
  if (coefficients.empty()) throw ValidationError("no coefficient matrices to accumulate");
  const std::size_t rows = coefficients.front().rows();
  const std::size_t cols = coefficients.front().cols();
  if (num_classes > cols) throw DimensionError("more classes than coefficient columns");
  Matrix sums(rows, num_classes, 0.0);
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (std::size_t n = 0; n < coefficients.size(); ++n) {
    const std::uint32_t y = labels[n];
    if (y >= num_classes) throw ValidationError("label out of range");
    if (coefficients[n].rows() != rows || coefficients[n].cols() != cols) {
      throw DimensionError("coefficient matrix " + std::to_string(n) + " has a different shape");
    }
    for (std::size_t i = 0; i < rows; ++i) sums(i, y) += coefficients[n](i, y);
    ++counts[y];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw ValidationError("class " + std::to_string(k) + " has no examples");
    for (std::size_t i = 0; i < rows; ++i) sums(i, k) /= static_cast<double>(counts[k]);
  }
  const Matrix normalized = normalize_rows(sums, config.norm()).values;
  MasterMatrix master;
  master.values = Matrix(rows, cols, config.norm().neutral(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < num_classes; ++k) master.values(i, k) = normalized(i, k);
  }
  master.build_config = config;
  master.class_counts = std::move(counts);
  return master;
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += (a[k] - b[k]) * (a[k] - b[k]);
  return sum;
}

/// Lloyd's k-means. Returns each point's squared distance to its assigned
/// centroid after convergence or max_iterations.
inline std::vector<double> kmeans_distances(const std::vector<std::span<const double>>& points,
                                            std::size_t k, RandomStream& rng,
                                            int max_iterations = 50) {
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  k = std::min(k, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t c = 0; c < k; ++c) std::swap(order[c], order[c + rng.below(n - c)]);
  std::vector<std::vector<double>> centroids;
  for (std::size_t c = 0; c < k; ++c) {
    centroids.emplace_back(points[order[c]].begin(), points[order[c]].end());
  }

  std::vector<std::size_t> assign(n, std::numeric_limits<std::size_t>::max());
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t p = 0; p < n; ++p) {
      std::size_t best = 0;
      double best_d = squared_distance(points[p], centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(points[p], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[p] != best) {
        assign[p] = best;
        changed = true;
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(dim, 0.0);
      std::size_t members = 0;
      for (std::size_t p = 0; p < n; ++p) {
        if (assign[p] != c) continue;
        for (std::size_t d = 0; d < dim; ++d) sum[d] += points[p][d];
        ++members;
      }
      // An empty cluster keeps its previous centroid.
      if (members == 0) continue;
      for (double& v : sum) v /= static_cast<double>(members);
      centroids[c] = std::move(sum);
    }
    if (!changed) break;
  }

  std::vector<double> dist(n);
  for (std::size_t p = 0; p < n; ++p) dist[p] = squared_distance(points[p], centroids[assign[p]]);
  return dist;
}

inline std::size_t fraction_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace detail

/// Selects which examples feed the master. gt_columns[n] is example n's
/// ground-truth coefficient column. Returns kept indices in ascending order.
inline std::vector<std::size_t> filter_examples(const std::vector<std::vector<double>>& gt_columns,
                                                std::span<const std::uint32_t> labels,
                                                std::size_t num_classes,
                                                const FilterSpec& filter) {
  filter.validate();
  if (gt_columns.size() != labels.size()) {
    throw DimensionError("ground-truth column list and label list differ in length");
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= num_classes) throw ValidationError("label out of range");
    by_class[labels[n]].push_back(n);
  }

  std::vector<std::size_t> kept;
  if (filter.kind == FilterSpec::Kind::None) {
    kept.resize(labels.size());
    std::iota(kept.begin(), kept.end(), std::size_t{0});
    return kept;
  }

  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto& members = by_class[k];
    if (members.empty()) {
      throw ValidationError("class " + std::to_string(k) + " has no examples to filter");
    }
    const std::size_t n = members.size();
    // Lower score = better; ties resolved by example index.
    std::vector<double> score(n);
    std::size_t keep = 0;
    if (filter.kind == FilterSpec::Kind::Clustering) {
      std::vector<std::span<const double>> points;
      for (std::size_t idx : members) points.emplace_back(gt_columns[idx]);
      RandomStream rng(filter.seed, {k});
      score = detail::kmeans_distances(points, filter.clusters, rng);
      const std::size_t drop = detail::fraction_count(filter.drop_fraction, n);
      keep = drop >= n ? 0 : n - drop;
    } else {
      for (std::size_t a = 0; a < n; ++a) {
        double total = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          if (a != b) total += pearson(gt_columns[members[a]], gt_columns[members[b]]);
        }
        score[a] = n > 1 ? -total / static_cast<double>(n - 1) : 0.0;
      }
      keep = detail::fraction_count(filter.keep_fraction, n);
    }
    if (keep == 0) {
      throw ValidationError("filter would remove every example of class " + std::to_string(k));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    for (std::size_t r = 0; r < keep; ++r) kept.push_back(members[order[r]]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

/// Routes every example dynamically and returns the coefficient matrix of
/// the requested iteration (the last one by default).
inline std::vector<Matrix> extract_coefficients(const LabeledDataset& dataset,
                                                const RoutingConfig& routing,
                                                std::optional<int> iteration = std::nullopt) {
  routing.validate();
  if (iteration && (*iteration < 1 || *iteration > routing.iterations)) {
    throw ValidationError("extract iteration " + std::to_string(*iteration) +
                          " outside 1.." + std::to_string(routing.iterations));
  }
  std::vector<Matrix> out;
  out.reserve(dataset.size());
  for (const auto& e : dataset.examples) {
    RoutingTrace trace = dynamic_route(e.predictions, routing);
    const std::size_t at = iteration ? static_cast<std::size_t>(*iteration - 1)
                                     : trace.iterations() - 1;
    out.push_back(std::move(trace.per_iteration_coefficients[at].values));
  }
  return out;
}

/// Master construction from already-extracted per-example coefficients.
inline MasterMatrix build_master_from_coefficients(std::span<const Matrix> coefficients,
                                                   std::span<const std::uint32_t> labels,
                                                   std::size_t num_classes,
                                                   const BuilderConfig& config) {
  config.validate();
  if (coefficients.size() != labels.size()) {
    throw DimensionError("coefficient list and label list differ in length");
  }
  std::vector<std::vector<double>> gt;
  gt.reserve(coefficients.size());
  for (std::size_t n = 0; n < coefficients.size(); ++n) {
    if (labels[n] >= coefficients[n].cols()) throw ValidationError("label out of range");
    gt.push_back(coefficients[n].column(labels[n]));
  }
  const auto kept = filter_examples(gt, labels, num_classes, config.filter);
  std::vector<Matrix> kept_coefficients;
  std::vector<std::uint32_t> kept_labels;
  kept_coefficients.reserve(kept.size());
  for (std::size_t idx : kept) {
    kept_coefficients.push_back(coefficients[idx]);
    kept_labels.push_back(labels[idx]);
  }
  if (config.accumulation == Accumulation::GroundTruthOnly) {
    return ground_truth_only_master(kept_coefficients, kept_labels, num_classes, config);
  }
  const auto containers = accumulate_containers(kept_coefficients, kept_labels, num_classes);
  return reduce_to_master(finalize_containers(containers, config), config);
}

/// Full offline pipeline: route, extract, filter, accumulate, finalize,
/// reduce. The result records its configs and the dataset digest.
inline MasterMatrix build_master(const LabeledDataset& dataset, const RoutingConfig& routing,
                                 const BuilderConfig& builder) {
  dataset.validate();
  builder.validate();
  const auto coefficients = extract_coefficients(dataset, routing, builder.extract_iteration);
  const auto labels = dataset.labels();
  MasterMatrix master =
      build_master_from_coefficients(coefficients, labels, dataset.num_classes(), builder);
  master.routing_config = routing;
  master.source_digest = dataset_digest(dataset);
  return master;
}

inline CapsuleOutputs fast_route(const PredictionTensor& u_hat, const MasterMatrix& master) {
  return fast_route(u_hat, master.values, master.routing_config.epsilon);
}

/// The master coefficients repeated once per example of a batch.
struct BatchedCoefficients {
  std::vector<Matrix> slices;

  std::size_t batch() const noexcept { return slices.size(); }
};

inline BatchedCoefficients replicate_master(const MasterMatrix& master, std::size_t batch) {
  if (batch < 1) throw ValidationError("batch size must be >= 1");
  return {std::vector<Matrix>(batch, master.values)};
}

inline std::vector<CapsuleOutputs> fast_route_batch(std::span<const PredictionTensor> batch,
                                                    const BatchedCoefficients& coefficients,
                                                    double epsilon = 1e-12) {
  if (batch.size() != coefficients.batch()) {
    throw DimensionError("batch of " + std::to_string(batch.size()) +
                         " examples against " + std::to_string(coefficients.batch()) +
                         " coefficient slices");
  }
  std::vector<CapsuleOutputs> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.push_back(fast_route(batch[b], coefficients.slices[b], epsilon));
  }
  return out;
}

}  // namespace capsroute
