#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capsroute/errors.hpp"
#include "capsroute/master.hpp"
#include "capsroute/routing.hpp"
#include "capsroute/stats.hpp"
#include "capsroute/tensor.hpp"

namespace capsroute {

struct CorrelationMatrix {
  Matrix values;
  bool symmetric = false;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
};

/// Class-averaged output capsule norms, one row per true class.
struct TuningCurves {
  Matrix values;
};

struct AccuracyReport {
  double overall = 0.0;
  std::vector<double> per_class_recall;
  std::vector<std::uint64_t> per_class_count;
};

namespace detail {

inline std::vector<std::string> indexed_labels(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

inline std::vector<std::vector<std::size_t>> group_by_class(std::span<const std::uint32_t> labels,
                                                            std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> out(num_classes);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= num_classes) throw ValidationError("label out of range");
    out[labels[n]].push_back(n);
  }
  return out;
}

inline std::vector<std::vector<double>> gt_columns(std::span<const Matrix> coefficients,
                                                   std::span<const std::uint32_t> labels) {
  if (coefficients.size() != labels.size()) {
    throw DimensionError("coefficient list and label list differ in length");
  }
  std::vector<std::vector<double>> out;
  out.reserve(coefficients.size());
  for (std::size_t n = 0; n < coefficients.size(); ++n) {
    if (labels[n] >= coefficients[n].cols()) throw ValidationError("label out of range");
    out.push_back(coefficients[n].column(labels[n]));
  }
  return out;
}

}  // namespace detail

/// Pairwise Pearson correlation between the ground-truth columns of the
/// first `first` examples (all of them when first is 0).
inline CorrelationMatrix gt_correlation_matrix(std::span<const Matrix> coefficients,
                                               std::span<const std::uint32_t> labels,
                                               std::size_t first = 0) {
  if (coefficients.size() != labels.size()) {
    throw DimensionError("coefficient list and label list differ in length");
  }
  const std::size_t m =
      first == 0 ? coefficients.size() : std::min(first, coefficients.size());
  if (m < 2) throw ValidationError("need at least two examples for a correlation matrix");
  const auto gt = detail::gt_columns(coefficients.first(m), labels.first(m));
  CorrelationMatrix out{Matrix(m, m, 0.0), true, {}, {}};
  for (std::size_t a = 0; a < m; ++a) {
    // 1, or 0 for a zero-variance column (no signature).
    out.values(a, a) = pearson(gt[a], gt[a]);
    for (std::size_t b = a + 1; b < m; ++b) {
      const double r = pearson(gt[a], gt[b]);
      out.values(a, b) = r;
      out.values(b, a) = r;
    }
  }
  for (std::size_t a = 0; a < m; ++a) {
    out.row_labels.push_back("ex" + std::to_string(a) + "_c" + std::to_string(labels[a]));
  }
  out.col_labels = out.row_labels;
  return out;
}

/// Mean ground-truth-column correlation between every pair of classes. The
/// diagonal excludes self-pairs.
inline CorrelationMatrix class_mean_correlations(std::span<const Matrix> coefficients,
                                                 std::span<const std::uint32_t> labels,
                                                 std::size_t num_classes) {
  const auto gt = detail::gt_columns(coefficients, labels);
  const auto groups = detail::group_by_class(labels, num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (groups[k].size() < 2) {
      throw ValidationError("class " + std::to_string(k) +
                            " needs at least two examples for its diagonal entry");
    }
  }
  CorrelationMatrix out{Matrix(num_classes, num_classes, 0.0), true,
                        detail::indexed_labels("class", num_classes),
                        detail::indexed_labels("class", num_classes)};
  for (std::size_t a = 0; a < num_classes; ++a) {
    for (std::size_t b = a; b < num_classes; ++b) {
      double total = 0.0;
      std::uint64_t pairs = 0;
      for (std::size_t x : groups[a]) {
        for (std::size_t y : groups[b]) {
          if (x == y) continue;
          total += pearson(gt[x], gt[y]);
          ++pairs;
        }
      }
      const double r = total / static_cast<double>(pairs);
      out.values(a, b) = r;
      out.values(b, a) = r;
    }
  }
  return out;
}

/// Entry (a, b): mean correlation between master column a and the
/// ground-truth columns of class-b examples. Not symmetric in general.
inline CorrelationMatrix master_class_correlations(const Matrix& master,
                                                   std::span<const Matrix> coefficients,
                                                   std::span<const std::uint32_t> labels,
                                                   std::size_t num_classes) {
  if (num_classes > master.cols()) throw DimensionError("more classes than master columns");
  const auto gt = detail::gt_columns(coefficients, labels);
  const auto groups = detail::group_by_class(labels, num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (groups[k].empty()) throw ValidationError("class " + std::to_string(k) + " has no examples");
  }
  for (const auto& col : gt) {
    if (col.size() != master.rows()) throw DimensionError("master rows do not match coefficients");
  }
  CorrelationMatrix out{Matrix(num_classes, num_classes, 0.0), false,
                        detail::indexed_labels("master", num_classes),
                        detail::indexed_labels("class", num_classes)};
  for (std::size_t a = 0; a < num_classes; ++a) {
    const auto column = master.column(a);
    for (std::size_t b = 0; b < num_classes; ++b) {
      double total = 0.0;
      for (std::size_t x : groups[b]) total += pearson(column, gt[x]);
      out.values(a, b) = total / static_cast<double>(groups[b].size());
    }
  }
  return out;
}

inline TuningCurves tuning_curves(std::span<const CapsuleOutputs> outputs,
                                  std::span<const std::uint32_t> labels,
                                  std::size_t num_classes) {
  if (outputs.size() != labels.size()) {
    throw DimensionError("output list and label list differ in length");
  }
  const auto groups = detail::group_by_class(labels, num_classes);
  if (outputs.empty()) throw ValidationError("no outputs");
  const std::size_t n_upper = outputs.front().n_upper();
  TuningCurves curves{Matrix(num_classes, n_upper, 0.0)};
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (groups[k].empty()) throw ValidationError("class " + std::to_string(k) + " has no examples");
    for (std::size_t n : groups[k]) {
      if (outputs[n].n_upper() != n_upper) throw DimensionError("outputs differ in capsule count");
      for (std::size_t j = 0; j < n_upper; ++j) curves.values(k, j) += norm(outputs[n].values.row(j));
    }
    for (std::size_t j = 0; j < n_upper; ++j) {
      curves.values(k, j) /= static_cast<double>(groups[k].size());
    }
  }
  return curves;
}

/// Overall accuracy and per-class recall. Classes with no examples report a
/// recall of 0 and a count of 0.
inline AccuracyReport accuracy_report(std::span<const std::uint32_t> predictions,
                                      std::span<const std::uint32_t> labels,
                                      std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("prediction and label lists differ in length");
  }
  if (labels.empty()) throw ValidationError("accuracy needs at least one example");
  AccuracyReport r;
  r.per_class_recall.assign(num_classes, 0.0);
  r.per_class_count.assign(num_classes, 0);
  std::uint64_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= num_classes) throw ValidationError("label out of range");
    ++r.per_class_count[labels[n]];
    if (predictions[n] == labels[n]) {
      ++correct;
      r.per_class_recall[labels[n]] += 1.0;
    }
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (r.per_class_count[k] > 0) {
      r.per_class_recall[k] /= static_cast<double>(r.per_class_count[k]);
    }
  }
  r.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
  return r;
}

/// Convenience: dynamic routing predictions and last-iteration coefficients
/// for a whole dataset.
struct RoutedDataset {
  std::vector<Matrix> coefficients;
  std::vector<CapsuleOutputs> outputs;
  std::vector<std::uint32_t> predictions;
};

inline RoutedDataset route_dataset(const LabeledDataset& dataset, const RoutingConfig& config) {
  RoutedDataset out;
  out.coefficients.reserve(dataset.size());
  out.outputs.reserve(dataset.size());
  out.predictions.reserve(dataset.size());
  for (const auto& e : dataset.examples) {
    RoutingTrace t = dynamic_route(e.predictions, config);
    out.predictions.push_back(static_cast<std::uint32_t>(classify(t.final_outputs)));
    out.coefficients.push_back(std::move(t.per_iteration_coefficients.back().values));
    out.outputs.push_back(std::move(t.final_outputs));
  }
  return out;
}

inline RoutedDataset fast_route_dataset(const LabeledDataset& dataset, const MasterMatrix& master) {
  if (master.values.rows() != dataset.n_lower || master.values.cols() != dataset.n_upper) {
    throw DimensionError("master shape does not match dataset");
  }
  RoutedDataset out;
  out.outputs.reserve(dataset.size());
  out.predictions.reserve(dataset.size());
  for (const auto& e : dataset.examples) {
    CapsuleOutputs v = fast_route(e.predictions, master);
    out.predictions.push_back(static_cast<std::uint32_t>(classify(v)));
    out.outputs.push_back(std::move(v));
  }
  return out;
}

}  // namespace capsroute
