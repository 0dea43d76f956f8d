#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "capsroute/analysis.hpp"
#include "capsroute/dataset.hpp"
#include "capsroute/errors.hpp"
#include "capsroute/master.hpp"
#include "capsroute/routing.hpp"

namespace capsroute {

enum class BenchMode { Dynamic, Fast };

inline const char* to_string(BenchMode m) { return m == BenchMode::Dynamic ? "dynamic" : "fast"; }

struct BenchReport {
  BenchMode mode = BenchMode::Dynamic;
  std::size_t examples = 0;
  int iterations = 0;
  std::size_t repeats = 0;
  double wall_time_total_s = 0.0;  // median over repeats
  double per_example_mean_us = 0.0;
  double per_example_p50_us = 0.0;
  double per_example_p95_us = 0.0;
  double speedup_vs_dynamic = 1.0;  // meaningful for Fast only
  double agreement_rate = 1.0;      // Fast vs Dynamic argmax agreement
  double accuracy = 0.0;
  std::uint64_t multiply_adds_per_example = 0;
  double throughput_examples_per_s = 0.0;  // multi-threaded, informational
  bool outputs_stable = true;  // timed predictions equal the untimed ones
};

struct BenchResult {
  BenchReport dynamic;
  BenchReport fast;
  double analytic_flop_ratio = 0.0;
};

/// Multiply-adds per example in the O(N_i * N_j * d_h) kernels: each dynamic
/// iteration does one weighted sum and one agreement update, fast routing does
/// a single weighted sum.
inline std::uint64_t dynamic_multiply_adds(std::size_t n_lower, std::size_t n_upper,
                                           std::size_t dim, int iterations) {
  return 2ULL * static_cast<std::uint64_t>(iterations) * n_lower * n_upper * dim;
}

inline std::uint64_t fast_multiply_adds(std::size_t n_lower, std::size_t n_upper,
                                        std::size_t dim) {
  return static_cast<std::uint64_t>(n_lower) * n_upper * dim;
}

inline double analytic_flop_ratio(std::size_t n_lower, std::size_t n_upper, std::size_t dim,
                                  int iterations) {
  return static_cast<double>(dynamic_multiply_adds(n_lower, n_upper, dim, iterations)) /
         static_cast<double>(fast_multiply_adds(n_lower, n_upper, dim));
}

namespace detail {

inline double percentile(std::vector<double> samples, double q) {
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return samples[lo] + (samples[hi] - samples[lo]) * (pos - static_cast<double>(lo));
}

template <typename RouteFn>
BenchReport time_mode(const LabeledDataset& dataset, std::size_t repeats, BenchMode mode,
                      const std::vector<std::uint32_t>& reference, RouteFn&& route) {
  using Clock = std::chrono::steady_clock;
  BenchReport rep;
  rep.mode = mode;
  rep.examples = dataset.size();
  rep.repeats = repeats;
  std::vector<double> totals;
  std::vector<double> per_example;
  per_example.reserve(repeats * dataset.size());
  for (std::size_t r = 0; r < repeats; ++r) {
    double total = 0.0;
    for (std::size_t n = 0; n < dataset.size(); ++n) {
      const auto t0 = Clock::now();
      const auto predicted = route(dataset.examples[n].predictions);
      const auto t1 = Clock::now();
      const double us = std::chrono::duration<double, std::micro>(t1 - t0).count();
      per_example.push_back(us);
      total += us;
      if (predicted != reference[n]) rep.outputs_stable = false;
    }
    totals.push_back(total * 1e-6);
  }
  rep.wall_time_total_s = percentile(totals, 0.5);
  double sum = 0.0;
  for (double v : per_example) sum += v;
  rep.per_example_mean_us = sum / static_cast<double>(per_example.size());
  rep.per_example_p50_us = percentile(per_example, 0.5);
  rep.per_example_p95_us = percentile(per_example, 0.95);
  return rep;
}

template <typename RouteFn>
double throughput(const LabeledDataset& dataset, unsigned threads, RouteFn&& route) {
  using Clock = std::chrono::steady_clock;
  threads = std::max(1u, threads);
  std::vector<std::thread> pool;
  const auto t0 = Clock::now();
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t n = t; n < dataset.size(); n += threads) {
        (void)route(dataset.examples[n].predictions);
      }
    });
  }
  for (auto& th : pool) th.join();
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  return s > 0.0 ? static_cast<double>(dataset.size()) / s : 0.0;
}

}  // namespace detail

/// Times dynamic and fast routing over identical inputs. A warm-up pass
/// (untimed) produces the reference predictions; gated latency figures come
/// from single-threaded runs and report the median over repeats.
inline BenchResult run_benchmark(const LabeledDataset& dataset, const MasterMatrix& master,
                                 const RoutingConfig& config, std::size_t repeats,
                                 unsigned threads = std::thread::hardware_concurrency()) {
  config.validate();
  if (repeats < 3) throw ValidationError("benchmark needs at least 3 repeats");
  if (dataset.examples.empty()) throw ValidationError("benchmark dataset is empty");
  if (master.values.rows() != dataset.n_lower || master.values.cols() != dataset.n_upper) {
    throw DimensionError("master is " + std::to_string(master.values.rows()) + "x" +
                         std::to_string(master.values.cols()) + " but dataset needs " +
                         std::to_string(dataset.n_lower) + "x" + std::to_string(dataset.n_upper));
  }

  auto dynamic = [&](const PredictionTensor& u) {
    return static_cast<std::uint32_t>(classify(dynamic_route(u, config).final_outputs));
  };
  auto fast = [&](const PredictionTensor& u) {
    return static_cast<std::uint32_t>(classify(fast_route(u, master.values, config.epsilon)));
  };

  std::vector<std::uint32_t> dyn_ref, fast_ref;
  for (const auto& e : dataset.examples) {
    dyn_ref.push_back(dynamic(e.predictions));
    fast_ref.push_back(fast(e.predictions));
  }
  const auto labels = dataset.labels();

  BenchResult out;
  out.dynamic = detail::time_mode(dataset, repeats, BenchMode::Dynamic, dyn_ref, dynamic);
  out.fast = detail::time_mode(dataset, repeats, BenchMode::Fast, fast_ref, fast);

  std::size_t agree = 0;
  for (std::size_t n = 0; n < dataset.size(); ++n) agree += dyn_ref[n] == fast_ref[n];
  const double agreement = static_cast<double>(agree) / static_cast<double>(dataset.size());

  for (BenchReport* r : {&out.dynamic, &out.fast}) {
    r->iterations = config.iterations;
    r->agreement_rate = agreement;
    r->accuracy =
        accuracy_report(r->mode == BenchMode::Dynamic ? dyn_ref : fast_ref, labels,
                        dataset.num_classes())
            .overall;
  }
  out.dynamic.multiply_adds_per_example =
      dynamic_multiply_adds(dataset.n_lower, dataset.n_upper, dataset.dim, config.iterations);
  out.fast.multiply_adds_per_example =
      fast_multiply_adds(dataset.n_lower, dataset.n_upper, dataset.dim);
  out.fast.speedup_vs_dynamic = out.dynamic.wall_time_total_s / out.fast.wall_time_total_s;
  out.analytic_flop_ratio =
      analytic_flop_ratio(dataset.n_lower, dataset.n_upper, dataset.dim, config.iterations);

  out.dynamic.throughput_examples_per_s = detail::throughput(dataset, threads, dynamic);
  out.fast.throughput_examples_per_s = detail::throughput(dataset, threads, fast);
  return out;
}

}  // namespace capsroute
