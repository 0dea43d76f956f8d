#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsroute/errors.hpp"
#include "capsroute/tensor.hpp"

namespace capsroute {

// Operation-count probe. Test builds define CAPSROUTE_COUNT_OPS to tally how
// many full sweeps each routing primitive performs on the calling thread.
struct OpCounts {
  std::uint64_t weighted_sums = 0;
  std::uint64_t squash_passes = 0;
  std::uint64_t agreement_updates = 0;
  std::uint64_t normalizations = 0;
};

#ifdef CAPSROUTE_COUNT_OPS
inline OpCounts& op_counts() {
  thread_local OpCounts counts;
  return counts;
}
inline void reset_op_counts() { op_counts() = OpCounts{}; }
#define CAPSROUTE_COUNT_OP(field) (++::capsroute::op_counts().field)
#else
#define CAPSROUTE_COUNT_OP(field) ((void)0)
#endif

enum class NormKind { MaxMin, Softmax };

inline const char* to_string(NormKind kind) {
  return kind == NormKind::MaxMin ? "maxmin" : "softmax";
}

inline NormKind parse_norm_kind(const std::string& text) {
  if (text == "maxmin") return NormKind::MaxMin;
  if (text == "softmax") return NormKind::Softmax;
  throw ValidationError("unknown normalization '" + text + "' (expected maxmin|softmax)");
}

/// Row normalization parameters shared by routing and master construction.
struct NormSpec {
  NormKind kind = NormKind::MaxMin;
  double lower_bound = 0.0;
  double upper_bound = 1.0;
  double epsilon = 1e-12;

  /// Neutral value for a coefficient row with no preference.
  double neutral(std::size_t n_upper) const {
    return kind == NormKind::MaxMin ? 0.5 * (lower_bound + upper_bound)
                                    : 1.0 / static_cast<double>(n_upper);
  }

  void validate() const {
    if (!std::isfinite(lower_bound) || !std::isfinite(upper_bound) ||
        !(lower_bound < upper_bound)) {
      throw ValidationError("normalization bounds require p < q");
    }
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  }
};

struct RoutingConfig {
  int iterations = 3;
  NormKind norm_kind = NormKind::MaxMin;
  double lower_bound = 0.0;
  double upper_bound = 1.0;
  // Unset: 1.0 for Max-Min, 1/N_j (softmax of zero logits) for Softmax.
  std::optional<double> init_coefficient;
  double epsilon = 1e-12;

  NormSpec norm() const { return {norm_kind, lower_bound, upper_bound, epsilon}; }

  double initial_value(std::size_t n_upper) const {
    if (init_coefficient) return *init_coefficient;
    return norm_kind == NormKind::MaxMin ? 1.0 : 1.0 / static_cast<double>(n_upper);
  }

  void validate() const {
    if (iterations < 1) throw ValidationError("routing iterations must be >= 1");
    norm().validate();
    if (init_coefficient && !std::isfinite(*init_coefficient)) {
      throw ValidationError("initial coefficient must be finite");
    }
  }

  bool operator==(const RoutingConfig&) const = default;
};

/// Per-example routing history: the normalized coefficients after each
/// iteration and the final upper-capsule outputs.
struct RoutingTrace {
  std::vector<CoefficientMatrix> per_iteration_coefficients;
  CapsuleOutputs final_outputs;

  const CoefficientMatrix& last_coefficients() const {
    return per_iteration_coefficients.back();
  }
  std::size_t iterations() const noexcept { return per_iteration_coefficients.size(); }
};

/// u_hat[i][j] = W[i][j] * u[i].
inline PredictionTensor predict_vectors(const LowerCapsules& u, const TransformTensor& w) {
  const Matrix& lower = u.values;
  if (lower.rows() != w.n_lower()) {
    throw DimensionError("lower capsule count " + std::to_string(lower.rows()) +
                         " does not match transform count " + std::to_string(w.n_lower()));
  }
  if (lower.cols() != w.in_dim()) {
    throw DimensionError("lower capsule dim " + std::to_string(lower.cols()) +
                         " does not match transform input dim " + std::to_string(w.in_dim()));
  }
  PredictionTensor out(w.n_lower(), w.n_upper(), w.out_dim());
  for (std::size_t i = 0; i < w.n_lower(); ++i) {
    auto ui = lower.row(i);
    for (std::size_t j = 0; j < w.n_upper(); ++j) {
      auto vote = out.vote(i, j);
      for (std::size_t r = 0; r < w.out_dim(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w.in_dim(); ++c) acc += w(i, j, r, c) * ui[c];
        vote[r] = acc;
      }
    }
  }
  return out;
}

/// v = |s|^2 / (1 + |s|^2) * s / |s|, with the zero vector returned when
/// |s| <= epsilon.
inline std::vector<double> squash(std::span<const double> s, double epsilon = 1e-12) {
  std::vector<double> out(s.size(), 0.0);
  const double n = norm(s);
  if (n <= epsilon) return out;
  const double sq = n * n;
  const double scale = sq / (1.0 + sq) / n;
  for (std::size_t k = 0; k < s.size(); ++k) out[k] = scale * s[k];
  return out;
}

inline CapsuleOutputs squash_rows(const CapsuleOutputs& s, double epsilon = 1e-12) {
  CAPSROUTE_COUNT_OP(squash_passes);
  CapsuleOutputs v{Matrix(s.values.rows(), s.values.cols())};
  for (std::size_t j = 0; j < s.values.rows(); ++j) {
    auto squashed = squash(s.values.row(j), epsilon);
    std::copy(squashed.begin(), squashed.end(), v.values.row(j).begin());
  }
  return v;
}

/// Normalizes each lower-capsule row of logits over the upper capsules.
/// Max-Min maps the row min to p and the row max to q; a row whose spread is
/// at most epsilon becomes (p+q)/2 (uniform 1/N_j for Softmax).
inline CoefficientMatrix normalize_rows(const Matrix& logits, const NormSpec& spec) {
  CAPSROUTE_COUNT_OP(normalizations);
  const std::size_t n_upper = logits.cols();
  CoefficientMatrix out{Matrix(logits.rows(), n_upper),
                        spec.kind == NormKind::MaxMin ? CoefficientKind::MaxMinNormalized
                                                      : CoefficientKind::SoftmaxNormalized};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto dst = out.values.row(i);
    const auto [lo_it, hi_it] = std::minmax_element(in.begin(), in.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi - lo <= spec.epsilon) {
      std::fill(dst.begin(), dst.end(), spec.neutral(n_upper));
      continue;
    }
    if (spec.kind == NormKind::MaxMin) {
      const double width = spec.upper_bound - spec.lower_bound;
      const double range = hi - lo;
      for (std::size_t j = 0; j < n_upper; ++j) {
        if (in[j] == lo) {
          dst[j] = spec.lower_bound;
        } else if (in[j] == hi) {
          dst[j] = spec.upper_bound;
        } else {
          dst[j] = std::clamp(spec.lower_bound + (in[j] - lo) / range * width,
                              spec.lower_bound, spec.upper_bound);
        }
      }
    } else {
      double total = 0.0;
      for (std::size_t j = 0; j < n_upper; ++j) {
        dst[j] = std::exp(in[j] - hi);
        total += dst[j];
      }
      for (std::size_t j = 0; j < n_upper; ++j) dst[j] /= total;
    }
  }
  return out;
}

inline CoefficientMatrix normalize_rows(const CoefficientMatrix& logits,
                                        const RoutingConfig& config) {
  return normalize_rows(logits.values, config.norm());
}

/// s[j] = sum_i c[i][j] * u_hat[i][j], accumulated in ascending i.
inline CapsuleOutputs weighted_sum(const Matrix& c, const PredictionTensor& u_hat) {
  if (c.rows() != u_hat.n_lower() || c.cols() != u_hat.n_upper()) {
    throw DimensionError("coefficient matrix " + std::to_string(c.rows()) + "x" +
                         std::to_string(c.cols()) + " does not match prediction tensor " +
                         std::to_string(u_hat.n_lower()) + "x" +
                         std::to_string(u_hat.n_upper()));
  }
  CAPSROUTE_COUNT_OP(weighted_sums);
  const std::size_t dim = u_hat.dim();
  CapsuleOutputs s{Matrix(u_hat.n_upper(), dim)};
  for (std::size_t i = 0; i < u_hat.n_lower(); ++i) {
    for (std::size_t j = 0; j < u_hat.n_upper(); ++j) {
      const double cij = c(i, j);
      auto vote = u_hat.vote(i, j);
      auto dst = s.values.row(j);
      for (std::size_t k = 0; k < dim; ++k) dst[k] += cij * vote[k];
    }
  }
  return s;
}

inline CapsuleOutputs weighted_sum(const CoefficientMatrix& c, const PredictionTensor& u_hat) {
  return weighted_sum(c.values, u_hat);
}

/// b'[i][j] = b[i][j] + u_hat[i][j] . v[j]
inline CoefficientMatrix agreement_update(const CoefficientMatrix& b,
                                          const PredictionTensor& u_hat,
                                          const CapsuleOutputs& v) {
  if (b.values.rows() != u_hat.n_lower() || b.values.cols() != u_hat.n_upper()) {
    throw DimensionError("logit matrix does not match prediction tensor");
  }
  if (v.n_upper() != u_hat.n_upper() || v.dim() != u_hat.dim()) {
    throw DimensionError("capsule outputs do not match prediction tensor");
  }
  CAPSROUTE_COUNT_OP(agreement_updates);
  CoefficientMatrix out{b.values, CoefficientKind::RawLogits};
  for (std::size_t i = 0; i < u_hat.n_lower(); ++i) {
    for (std::size_t j = 0; j < u_hat.n_upper(); ++j) {
      out.values(i, j) += dot(u_hat.vote(i, j), v.values.row(j));
    }
  }
  return out;
}

/// Coefficients in effect before the first routing iteration.
inline CoefficientMatrix initial_coefficients(std::size_t n_lower, std::size_t n_upper,
                                              const RoutingConfig& config) {
  return {Matrix(n_lower, n_upper, config.initial_value(n_upper)),
          config.norm_kind == NormKind::MaxMin ? CoefficientKind::MaxMinNormalized
                                               : CoefficientKind::SoftmaxNormalized};
}

/// Iterative routing-by-agreement. Logits start at zero and accumulate
/// agreement across iterations; coefficients start at the configured initial
/// value and are re-normalized from the logits after every update.
inline RoutingTrace dynamic_route(const PredictionTensor& u_hat, const RoutingConfig& config) {
  config.validate();
  const NormSpec spec = config.norm();
  CoefficientMatrix c = initial_coefficients(u_hat.n_lower(), u_hat.n_upper(), config);
  CoefficientMatrix b{Matrix(u_hat.n_lower(), u_hat.n_upper(), 0.0),
                      CoefficientKind::RawLogits};
  RoutingTrace trace;
  trace.per_iteration_coefficients.reserve(static_cast<std::size_t>(config.iterations));
  CapsuleOutputs v;
  for (int it = 0; it < config.iterations; ++it) {
    v = squash_rows(weighted_sum(c, u_hat), config.epsilon);
    b = agreement_update(b, u_hat, v);
    c = normalize_rows(b.values, spec);
    trace.per_iteration_coefficients.push_back(c);
  }
  trace.final_outputs = std::move(v);
  return trace;
}

/// Single-pass routing with fixed coefficients: one weighted sum and one
/// squash, no agreement updates.
inline CapsuleOutputs fast_route(const PredictionTensor& u_hat, const Matrix& coefficients,
                                 double epsilon = 1e-12) {
  return squash_rows(weighted_sum(coefficients, u_hat), epsilon);
}

/// Index of the capsule with the largest norm; ties go to the lowest index.
inline std::size_t classify(const CapsuleOutputs& v) {
  if (v.n_upper() == 0) throw DimensionError("cannot classify zero capsules");
  std::size_t best = 0;
  double best_norm = -1.0;
  for (std::size_t j = 0; j < v.n_upper(); ++j) {
    const double n = norm(v.values.row(j));
    if (n > best_norm) {
      best_norm = n;
      best = j;
    }
  }
  return best;
}

inline std::vector<double> capsule_norms(const CapsuleOutputs& v) {
  std::vector<double> out(v.n_upper());
  for (std::size_t j = 0; j < v.n_upper(); ++j) out[j] = norm(v.values.row(j));
  return out;
}

}  // namespace capsroute
