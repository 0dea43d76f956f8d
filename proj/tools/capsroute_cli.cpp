// capsroute: command-line front end for dataset generation, routing, master
// construction, analysis exports and the fast-vs-dynamic benchmark.
//
// Exit codes: 0 success, 2 validation error, 3 format error, 4 I/O error,
// 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "capsroute/capsroute.hpp"

namespace {

using namespace capsroute;

constexpr int kExitValidation = 2;
constexpr int kExitFormat = 3;
constexpr int kExitIo = 4;

struct RoutingFlags {
  std::string norm = "maxmin";
  int iters = 3;
  double p = 0.0;
  double q = 1.0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--norm", norm, "Row normalization")
        ->check(CLI::IsMember({"maxmin", "softmax"}));
    cmd->add_option("--iters", iters, "Routing iterations");
    cmd->add_option("--p", p, "Lower normalization bound");
    cmd->add_option("--q", q, "Upper normalization bound");
  }

  RoutingConfig config() const {
    RoutingConfig c;
    c.iterations = iters;
    c.norm_kind = parse_norm_kind(norm);
    c.lower_bound = p;
    c.upper_bound = q;
    c.validate();
    return c;
  }
};

FilterSpec parse_filter(const std::string& text, std::optional<std::uint64_t> seed) {
  if (text == "none") return FilterSpec::none();
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("filter must be none, kmeans:<drop> or sim:<keep>");
  }
  const std::string kind = text.substr(0, colon);
  double fraction = 0.0;
  try {
    std::size_t used = 0;
    fraction = std::stod(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw ValidationError("filter fraction '" + text.substr(colon + 1) + "' is not a number");
  }
  FilterSpec f;
  if (kind == "kmeans") {
    if (!seed) throw ValidationError("--seed is required with the kmeans filter");
    f = FilterSpec::clustering(fraction, *seed);
  } else if (kind == "sim") {
    f = FilterSpec::similarity(fraction);
  } else {
    throw ValidationError("unknown filter '" + kind + "'");
  }
  f.validate();
  return f;
}

std::string fmt(double v) { return format_csv_value(v); }

// ---- gen ------------------------------------------------------------------

struct GenArgs {
  std::string spec_file;
  std::optional<std::size_t> classes, n_lower, dim, per_class_train, per_class_test;
  std::optional<double> active_frac, overlap, noise, beta, jitter;
  std::optional<std::uint64_t> seed;
  std::string out_train, out_test;
  std::string scalar = "f64";
};

int run_gen(const GenArgs& a) {
  PlantedSpec spec;
  bool have_seed = false;
  if (!a.spec_file.empty()) {
    std::ifstream in(a.spec_file);
    if (!in) throw IoError("cannot open spec file '" + a.spec_file + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("spec file is not valid JSON: ") + e.what(), 0);
    }
    try {
      spec = j.get<PlantedSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("spec file: ") + e.what());
    }
    have_seed = true;
  }
  if (a.classes) spec.classes = *a.classes;
  if (a.n_lower) spec.n_lower = *a.n_lower;
  if (a.dim) spec.dim = *a.dim;
  if (a.active_frac) spec.active_fraction = *a.active_frac;
  if (a.overlap) spec.overlap = *a.overlap;
  if (a.noise) spec.noise = *a.noise;
  if (a.beta) spec.signal = *a.beta;
  if (a.jitter) spec.profile_jitter = *a.jitter;
  if (a.per_class_train) spec.per_class_train = *a.per_class_train;
  if (a.per_class_test) spec.per_class_test = *a.per_class_test;
  if (a.seed) {
    spec.seed = *a.seed;
    have_seed = true;
  }
  if (!have_seed) throw ValidationError("--seed is required (inline or in the spec file)");
  spec.validate();
  for (const auto& w : spec.warnings()) std::cerr << "warning: " << w << "\n";

  const auto width = a.scalar == "f32" ? ScalarWidth::F32 : ScalarWidth::F64;
  auto [train, test] = generate_planted(spec);
  write_dataset(train, a.out_train, width);
  write_dataset(test, a.out_test, width);
  std::cout << "train: " << train.size() << " examples, digest " << to_hex(dataset_digest(train))
            << "\ntest: " << test.size() << " examples, digest " << to_hex(dataset_digest(test))
            << "\n";
  return 0;
}

// ---- route ----------------------------------------------------------------

struct RouteArgs {
  std::string dataset, mode = "dynamic", master, out_trace, report;
  RoutingFlags routing;
};

int run_route(const RouteArgs& a) {
  const LabeledDataset d = read_dataset(a.dataset);
  const bool fast = a.mode == "fast";
  if (fast && a.master.empty()) throw ValidationError("--master is required in fast mode");

  TraceFile trace;
  trace.n_lower = d.n_lower;
  trace.n_upper = d.n_upper;
  trace.dim = d.dim;
  std::optional<MasterMatrix> master;
  RoutingConfig config = a.routing.config();
  if (fast) {
    master = read_master(a.master);
    if (master->values.rows() != d.n_lower || master->values.cols() != d.n_upper) {
      throw DimensionError("master shape does not match dataset");
    }
    trace.iterations = 0;
    trace.metadata = nlohmann::json{{"mode", "fast"}, {"master", a.master}}.dump();
  } else {
    trace.iterations = static_cast<std::size_t>(config.iterations);
    trace.coefficient_kind = config.norm_kind == NormKind::Softmax
                                 ? CoefficientKind::SoftmaxNormalized
                                 : CoefficientKind::MaxMinNormalized;
    trace.metadata = nlohmann::json{{"mode", "dynamic"}, {"routing_config", config}}.dump();
  }

  std::vector<std::uint32_t> predictions;
  for (const auto& e : d.examples) {
    TraceRecord rec;
    rec.label = e.label;
    if (fast) {
      rec.trace.final_outputs = fast_route(e.predictions, *master);
    } else {
      rec.trace = dynamic_route(e.predictions, config);
    }
    rec.predicted = static_cast<std::uint32_t>(classify(rec.trace.final_outputs));
    predictions.push_back(rec.predicted);
    trace.records.push_back(std::move(rec));
  }

  if (!a.out_trace.empty()) write_trace(trace, a.out_trace);
  if (!a.report.empty()) {
    CsvTable t;
    t.header = {"example", "label", "predicted"};
    for (std::size_t j = 0; j < d.n_upper; ++j) t.header.push_back("norm_capsule" + std::to_string(j));
    for (std::size_t n = 0; n < trace.records.size(); ++n) {
      const auto& rec = trace.records[n];
      std::vector<std::string> row{std::to_string(n), std::to_string(rec.label),
                                   std::to_string(rec.predicted)};
      for (double v : capsule_norms(rec.trace.final_outputs)) row.push_back(fmt(v));
      t.rows.push_back(std::move(row));
    }
    write_csv(t, a.report);
  }
  if (!d.examples.empty()) {
    const auto acc = accuracy_report(predictions, d.labels(), d.num_classes());
    std::cout << a.mode << " accuracy: " << fmt(acc.overall) << " over " << d.size()
              << " examples\n";
  }
  return 0;
}

// ---- build-master ---------------------------------------------------------

struct BuildArgs {
  std::string dataset, filter = "none", out, accumulation = "full";
  std::optional<std::uint64_t> seed;
  RoutingFlags routing;
};

int run_build(const BuildArgs& a) {
  const LabeledDataset d = read_dataset(a.dataset);
  const RoutingConfig routing = a.routing.config();
  BuilderConfig builder;
  builder.norm_kind = routing.norm_kind;
  builder.lower_bound = routing.lower_bound;
  builder.upper_bound = routing.upper_bound;
  builder.filter = parse_filter(a.filter, a.seed);
  builder.accumulation =
      a.accumulation == "gt-only" ? Accumulation::GroundTruthOnly : Accumulation::FullMatrix;
  const MasterMatrix m = build_master(d, routing, builder);
  write_master(m, a.out);
  std::uint64_t used = 0;
  for (auto c : m.class_counts) used += c;
  std::cout << "master " << m.values.rows() << "x" << m.values.cols() << " from " << used << " of "
            << d.size() << " examples, source digest " << to_hex(m.source_digest) << "\n";
  return 0;
}

// ---- analyze --------------------------------------------------------------

struct AnalyzeArgs {
  std::string kind, dataset, master, out, mode = "dynamic";
  std::size_t first = 100;
  RoutingFlags routing;
};

int run_analyze(const AnalyzeArgs& a) {
  const LabeledDataset d = read_dataset(a.dataset);
  const auto labels = d.labels();
  const std::size_t k = d.num_classes();
  const bool needs_master = a.kind == "master-corr" || a.mode == "fast";
  std::optional<MasterMatrix> master;
  if (needs_master) {
    if (a.master.empty()) throw ValidationError("--master is required for this analysis");
    master = read_master(a.master);
  }

  if (a.kind == "gt-corr" || a.kind == "class-corr" || a.kind == "master-corr") {
    const RoutedDataset routed = route_dataset(d, a.routing.config());
    if (a.kind == "gt-corr") {
      export_csv(gt_correlation_matrix(routed.coefficients, labels, a.first), a.out);
    } else if (a.kind == "class-corr") {
      export_csv(class_mean_correlations(routed.coefficients, labels, k), a.out);
    } else {
      export_csv(master_class_correlations(master->values, routed.coefficients, labels, k), a.out);
    }
    return 0;
  }

  const RoutedDataset routed =
      a.mode == "fast" ? fast_route_dataset(d, *master) : route_dataset(d, a.routing.config());
  if (a.kind == "tuning") {
    export_csv(tuning_curves(routed.outputs, labels, k), a.out);
  } else {
    const auto report = accuracy_report(routed.predictions, labels, k);
    export_csv(report, a.out);
    std::cout << a.mode << " accuracy: " << fmt(report.overall) << "\n";
  }
  return 0;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string dataset, master, out;
  std::size_t repeats = 5;
  RoutingFlags routing;
};

int run_bench(const BenchArgs& a) {
  const LabeledDataset d = read_dataset(a.dataset);
  const MasterMatrix m = read_master(a.master);
  const BenchResult r = run_benchmark(d, m, a.routing.config(), a.repeats);
  CsvTable t;
  t.header = {"mode", "examples", "iterations", "repeats", "wall_time_total_s",
              "per_example_mean_us", "per_example_p50_us", "per_example_p95_us",
              "speedup_vs_dynamic", "agreement_rate", "accuracy", "multiply_adds_per_example",
              "analytic_flop_ratio", "throughput_examples_per_s"};
  for (const BenchReport* rep : {&r.dynamic, &r.fast}) {
    t.rows.push_back({to_string(rep->mode), std::to_string(rep->examples),
                      std::to_string(rep->iterations), std::to_string(rep->repeats),
                      fmt(rep->wall_time_total_s), fmt(rep->per_example_mean_us),
                      fmt(rep->per_example_p50_us), fmt(rep->per_example_p95_us),
                      fmt(rep->speedup_vs_dynamic), fmt(rep->agreement_rate), fmt(rep->accuracy),
                      std::to_string(rep->multiply_adds_per_example), fmt(r.analytic_flop_ratio),
                      fmt(rep->throughput_examples_per_s)});
  }
  write_csv(t, a.out);
  std::cout << "dynamic " << fmt(r.dynamic.wall_time_total_s) << " s, fast "
            << fmt(r.fast.wall_time_total_s) << " s, speedup " << fmt(r.fast.speedup_vs_dynamic)
            << "x (analytic " << fmt(r.analytic_flop_ratio) << "x), agreement "
            << fmt(r.fast.agreement_rate) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Capsule routing engine: dynamic and master-coefficient routing"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a planted-model train/test pair");
  gen_cmd->add_option("--spec", gen.spec_file, "JSON planted spec (inline flags override)");
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--n-lower", gen.n_lower);
  gen_cmd->add_option("--dim", gen.dim);
  gen_cmd->add_option("--active-frac", gen.active_frac);
  gen_cmd->add_option("--overlap", gen.overlap);
  gen_cmd->add_option("--noise", gen.noise);
  gen_cmd->add_option("--beta", gen.beta);
  gen_cmd->add_option("--jitter", gen.jitter);
  gen_cmd->add_option("--per-class-train", gen.per_class_train);
  gen_cmd->add_option("--per-class-test", gen.per_class_test);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out-train", gen.out_train)->required();
  gen_cmd->add_option("--out-test", gen.out_test)->required();
  gen_cmd->add_option("--scalar", gen.scalar, "Stored scalar width")
      ->check(CLI::IsMember({"f32", "f64"}));

  RouteArgs route;
  auto* route_cmd = app.add_subcommand("route", "Route a dataset and report accuracy");
  route_cmd->add_option("--dataset", route.dataset)->required();
  route_cmd->add_option("--mode", route.mode)->check(CLI::IsMember({"dynamic", "fast"}));
  route_cmd->add_option("--master", route.master);
  route.routing.add_to(route_cmd);
  route_cmd->add_option("--out-trace", route.out_trace);
  route_cmd->add_option("--report", route.report);

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build-master", "Build master routing coefficients");
  build_cmd->add_option("--dataset", build.dataset)->required();
  build.routing.add_to(build_cmd);
  build_cmd->add_option("--filter", build.filter, "none | kmeans:<drop> | sim:<keep>");
  build_cmd->add_option("--seed", build.seed, "Seed for the kmeans filter");
  build_cmd->add_option("--accumulation", build.accumulation)
      ->check(CLI::IsMember({"full", "gt-only"}));
  build_cmd->add_option("--out", build.out)->required();

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Export correlation and tuning analyses");
  analyze_cmd->add_option("kind", analyze.kind)
      ->required()
      ->check(CLI::IsMember({"gt-corr", "class-corr", "master-corr", "tuning", "accuracy"}));
  analyze_cmd->add_option("--dataset", analyze.dataset)->required();
  analyze_cmd->add_option("--master", analyze.master);
  analyze_cmd->add_option("--first", analyze.first, "Examples in the gt-corr matrix");
  analyze_cmd->add_option("--mode", analyze.mode, "Routing for tuning/accuracy")
      ->check(CLI::IsMember({"dynamic", "fast"}));
  analyze.routing.add_to(analyze_cmd);
  analyze_cmd->add_option("--out", analyze.out)->required();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time dynamic vs fast routing");
  bench_cmd->add_option("--dataset", bench.dataset)->required();
  bench_cmd->add_option("--master", bench.master)->required();
  bench.routing.add_to(bench_cmd);
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--out", bench.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*route_cmd) return run_route(route);
    if (*build_cmd) return run_build(build);
    if (*analyze_cmd) return run_analyze(analyze);
    if (*bench_cmd) return run_bench(bench);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
