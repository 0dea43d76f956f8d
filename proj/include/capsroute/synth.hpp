#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "capsroute/dataset.hpp"
#include "capsroute/errors.hpp"
#include "capsroute/rng.hpp"
#include "capsroute/tensor.hpp"

namespace capsroute {

/// Parameters of the planted-model generator. Each class owns a unit target
/// direction and a sparse profile over lower capsules; only the ground-truth
/// column of an example carries signal, every entry carries Gaussian noise.
struct PlantedSpec {
  std::size_t classes = 10;
  std::size_t n_lower = 64;
  std::size_t dim = 16;
  double active_fraction = 0.25;
  double overlap = 0.0;
  double signal = 1.0;
  double noise = 0.1;
  std::size_t per_class_train = 100;
  std::size_t per_class_test = 100;
  double profile_jitter = 0.2;
  std::uint64_t seed = 0;

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::llround(active_fraction * static_cast<double>(n_lower)));
  }

  void validate() const {
    if (classes < 1 || n_lower < 1 || dim < 1) {
      throw ValidationError("classes, n_lower and dim must all be >= 1");
    }
    if (!(active_fraction > 0.0 && active_fraction <= 1.0)) {
      throw ValidationError("active fraction must lie in (0, 1]");
    }
    if (active_count() < 1) throw ValidationError("round(active_fraction * n_lower) must be >= 1");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("overlap must lie in [0, 1)");
    if (!(signal > 0.0) || !std::isfinite(signal)) throw ValidationError("signal must be > 0");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("noise must be >= 0");
    if (per_class_train < 1) throw ValidationError("per-class train count must be >= 1");
    if (!(profile_jitter >= 0.0 && profile_jitter < 1.0)) {
      throw ValidationError("profile jitter must lie in [0, 1)");
    }
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (classes > dim) {
      out.push_back("classes (" + std::to_string(classes) + ") exceed capsule dim (" +
                    std::to_string(dim) + "); class targets cannot be mutually orthogonal");
    }
    return out;
  }

  bool operator==(const PlantedSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const PlantedSpec& s) {
  j = nlohmann::json{{"classes", s.classes},
                     {"n_lower", s.n_lower},
                     {"dim", s.dim},
                     {"active_fraction", s.active_fraction},
                     {"overlap", s.overlap},
                     {"signal", s.signal},
                     {"noise", s.noise},
                     {"per_class_train", s.per_class_train},
                     {"per_class_test", s.per_class_test},
                     {"profile_jitter", s.profile_jitter},
                     {"seed", s.seed}};
}

/// Every field is optional except the seed.
inline void from_json(const nlohmann::json& j, PlantedSpec& s) {
  if (!j.contains("seed")) throw ValidationError("planted spec requires an explicit seed");
  s.seed = j.at("seed").get<std::uint64_t>();
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("classes", s.classes);
  opt("n_lower", s.n_lower);
  opt("dim", s.dim);
  opt("active_fraction", s.active_fraction);
  opt("overlap", s.overlap);
  opt("signal", s.signal);
  opt("noise", s.noise);
  opt("per_class_train", s.per_class_train);
  opt("per_class_test", s.per_class_test);
  opt("profile_jitter", s.profile_jitter);
}

/// Per-class ground truth of a planted model.
struct PlantedModel {
  std::vector<std::vector<double>> targets;   // K x dim, unit norm
  std::vector<std::vector<double>> profiles;  // K x n_lower, zero off the active set
  std::vector<std::vector<std::size_t>> active_sets;
};

namespace detail {

enum : std::uint64_t { kTargetStream = 1, kProfileStream = 2, kMagnitudeStream = 3, kExampleStream = 4 };

}  // namespace detail

inline PlantedModel planted_model(const PlantedSpec& spec) {
  spec.validate();
  PlantedModel model;

  RandomStream targets(spec.seed, {detail::kTargetStream});
  for (std::size_t k = 0; k < spec.classes; ++k) {
    std::vector<double> t(spec.dim);
    double n = 0.0;
    while (n == 0.0) {
      for (double& x : t) x = targets.normal();
      n = norm(t);
    }
    for (double& x : t) x /= n;
    model.targets.push_back(std::move(t));
  }

  const std::size_t m = spec.active_count();
  const auto shared_count =
      static_cast<std::size_t>(std::llround(spec.overlap * static_cast<double>(m)));
  RandomStream profiles(spec.seed, {detail::kProfileStream});
  for (std::size_t k = 0; k < spec.classes; ++k) {
    // Partial Fisher-Yates: the first m entries form an ordered active set.
    std::vector<std::size_t> perm(spec.n_lower);
    for (std::size_t i = 0; i < spec.n_lower; ++i) perm[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t pick = i + profiles.below(spec.n_lower - i);
      std::swap(perm[i], perm[pick]);
    }
    std::vector<std::size_t> active(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
    if (k >= 1 && shared_count > 0) {
      // Active sets list a class's own members first, so the next class
      // inherits parts from this class rather than from further back.
      const auto& prev = model.active_sets[k - 1];
      const std::vector<std::size_t> shared(
          prev.begin(), prev.begin() + static_cast<std::ptrdiff_t>(shared_count));
      std::vector<std::size_t> merged;
      for (std::size_t idx : active) {
        if (merged.size() + shared.size() == m) break;
        if (std::find(shared.begin(), shared.end(), idx) == shared.end()) merged.push_back(idx);
      }
      merged.insert(merged.end(), shared.begin(), shared.end());
      active = std::move(merged);
    }
    model.active_sets.push_back(active);
  }

  for (std::size_t k = 0; k < spec.classes; ++k) {
    RandomStream magnitudes(spec.seed, {detail::kMagnitudeStream, k});
    std::vector<double> profile(spec.n_lower, 0.0);
    std::vector<std::size_t> sorted = model.active_sets[k];
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i : sorted) profile[i] = magnitudes.uniform(0.5, 1.0);
    model.profiles.push_back(std::move(profile));
  }
  return model;
}

/// One example of class `label`. split 0 is train, 1 is test; every
/// (split, label, index) triple owns its own random stream.
inline PredictionTensor planted_example(const PlantedSpec& spec, const PlantedModel& model,
                                        std::uint64_t split, std::size_t label,
                                        std::size_t index) {
  RandomStream rng(spec.seed, {detail::kExampleStream, split, label, index});
  const std::size_t n_upper = spec.classes;
  PredictionTensor u(spec.n_lower, n_upper, spec.dim);

  std::vector<double> jitter(spec.n_lower);
  for (double& x : jitter) x = rng.uniform(-spec.profile_jitter, spec.profile_jitter);

  const double noise_scale = spec.noise / std::sqrt(static_cast<double>(spec.dim));
  const auto& target = model.targets[label];
  const auto& profile = model.profiles[label];
  for (std::size_t i = 0; i < spec.n_lower; ++i) {
    for (std::size_t j = 0; j < n_upper; ++j) {
      auto vote = u.vote(i, j);
      const double amp = (j == label) ? spec.signal * profile[i] * (1.0 + jitter[i]) : 0.0;
      for (std::size_t k = 0; k < spec.dim; ++k) {
        vote[k] = amp * target[k] + noise_scale * rng.normal();
      }
    }
  }
  return u;
}

inline LabeledDataset planted_split(const PlantedSpec& spec, const PlantedModel& model,
                                    std::uint64_t split, std::size_t per_class) {
  LabeledDataset d;
  d.n_lower = spec.n_lower;
  d.n_upper = spec.classes;
  d.dim = spec.dim;
  d.examples.reserve(per_class * spec.classes);
  // Interleaved so any prefix of the dataset covers the classes evenly.
  for (std::size_t n = 0; n < per_class; ++n) {
    for (std::size_t y = 0; y < spec.classes; ++y) {
      d.examples.push_back({planted_example(spec, model, split, y, n),
                            static_cast<std::uint32_t>(y)});
    }
  }
  d.provenance = nlohmann::json{{"generator", "planted"},
                                {"split", split == 0 ? "train" : "test"},
                                {"spec", spec}}
                     .dump();
  return d;
}

/// Deterministic train/test pair from a planted spec.
inline std::pair<LabeledDataset, LabeledDataset> generate_planted(const PlantedSpec& spec) {
  const PlantedModel model = planted_model(spec);
  return {planted_split(spec, model, 0, spec.per_class_train),
          planted_split(spec, model, 1, spec.per_class_test)};
}

}  // namespace capsroute
