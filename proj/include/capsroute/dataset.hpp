#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "capsroute/errors.hpp"
#include "capsroute/tensor.hpp"

namespace capsroute {

struct LabeledExample {
  PredictionTensor predictions;
  std::uint32_t label = 0;

  bool operator==(const LabeledExample&) const = default;
};

/// A collection of prediction tensors with class labels. n_upper doubles as
/// the class count K.
struct LabeledDataset {
  std::size_t n_lower = 0;
  std::size_t n_upper = 0;
  std::size_t dim = 0;
  std::vector<LabeledExample> examples;
  /// JSON text describing where the data came from (generator spec or
  /// external source).
  std::string provenance;

  std::size_t size() const noexcept { return examples.size(); }
  std::size_t num_classes() const noexcept { return n_upper; }

  std::vector<std::uint32_t> labels() const {
    std::vector<std::uint32_t> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.label);
    return out;
  }

  void validate() const {
    if (n_lower == 0 || n_upper == 0 || dim == 0) {
      throw ValidationError("dataset dimensions must all be >= 1");
    }
    for (std::size_t n = 0; n < examples.size(); ++n) {
      const auto& e = examples[n];
      if (e.predictions.n_lower() != n_lower || e.predictions.n_upper() != n_upper ||
          e.predictions.dim() != dim) {
        throw DimensionError("example " + std::to_string(n) + " has mismatched dims");
      }
      if (e.label >= n_upper) {
        throw ValidationError("example " + std::to_string(n) + " label " +
                              std::to_string(e.label) + " out of range");
      }
    }
  }

  bool operator==(const LabeledDataset&) const = default;
};

using Digest = std::array<std::uint8_t, 32>;

inline std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (std::uint8_t b : d) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

namespace detail {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("SHA-256 initialization failed");
    }
  }

  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx_.get(), data, size) != 1) throw Error("SHA-256 update failed");
  }

  void update_u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int k = 0; k < 4; ++k) b[k] = static_cast<std::uint8_t>(v >> (8 * k));
    update(b, 4);
  }

  void update_u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<std::uint8_t>(v >> (8 * k));
    update(b, 8);
  }

  void update_f64(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }

  Digest finish() {
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), out.data(), &len) != 1 || len != out.size()) {
      throw Error("SHA-256 finalization failed");
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace detail

/// SHA-256 over the canonical little-endian serialization: dims (u32 x3),
/// example count (u64), then per example its label (u32) and every
/// prediction value as f64 in (i, j, coordinate) order. Provenance text is
/// not hashed.
inline Digest dataset_digest(const LabeledDataset& d) {
  detail::Sha256 h;
  h.update("capsroute-dataset", 17);
  h.update_u32(static_cast<std::uint32_t>(d.n_lower));
  h.update_u32(static_cast<std::uint32_t>(d.n_upper));
  h.update_u32(static_cast<std::uint32_t>(d.dim));
  h.update_u64(d.examples.size());
  for (const auto& e : d.examples) {
    h.update_u32(e.label);
    for (double v : e.predictions.data()) h.update_f64(v);
  }
  return h.finish();
}

}  // namespace capsroute
