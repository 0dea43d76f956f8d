#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capsroute/errors.hpp"

namespace capsroute {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data size does not match " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

/// Prediction vectors u_hat[i][j] (n_lower x n_upper x dim), the input of a
/// routing layer.
class PredictionTensor {
 public:
  PredictionTensor() = default;
  PredictionTensor(std::size_t n_lower, std::size_t n_upper, std::size_t dim)
      : n_lower_(n_lower), n_upper_(n_upper), dim_(dim),
        data_(n_lower * n_upper * dim, 0.0) {
    check_dims();
  }
  PredictionTensor(std::size_t n_lower, std::size_t n_upper, std::size_t dim,
                   std::vector<double> data)
      : n_lower_(n_lower), n_upper_(n_upper), dim_(dim), data_(std::move(data)) {
    check_dims();
    if (data_.size() != n_lower_ * n_upper_ * dim_) {
      throw DimensionError("prediction tensor data size mismatch");
    }
    if (!all_finite(data_)) throw ValidationError("prediction tensor has non-finite entries");
  }

  std::size_t n_lower() const noexcept { return n_lower_; }
  std::size_t n_upper() const noexcept { return n_upper_; }
  std::size_t dim() const noexcept { return dim_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * n_upper_ + j) * dim_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * n_upper_ + j) * dim_ + k];
  }

  /// The vote of lower capsule i for upper capsule j.
  std::span<double> vote(std::size_t i, std::size_t j) {
    return {data_.data() + (i * n_upper_ + j) * dim_, dim_};
  }
  std::span<const double> vote(std::size_t i, std::size_t j) const {
    return {data_.data() + (i * n_upper_ + j) * dim_, dim_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const PredictionTensor&) const = default;

 private:
  void check_dims() const {
    if (n_lower_ == 0 || n_upper_ == 0 || dim_ == 0) {
      throw DimensionError("prediction tensor dimensions must all be >= 1");
    }
  }

  std::size_t n_lower_ = 0;
  std::size_t n_upper_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// Lower-level capsules u_i, one row per capsule (n_lower x lower_dim).
struct LowerCapsules {
  Matrix values;
};

/// Transformation matrices W_ij, stored as n_lower x n_upper blocks of
/// out_dim x in_dim row-major matrices.
class TransformTensor {
 public:
  TransformTensor(std::size_t n_lower, std::size_t n_upper, std::size_t out_dim,
                  std::size_t in_dim)
      : n_lower_(n_lower), n_upper_(n_upper), out_dim_(out_dim), in_dim_(in_dim),
        data_(n_lower * n_upper * out_dim * in_dim, 0.0) {}

  std::size_t n_lower() const noexcept { return n_lower_; }
  std::size_t n_upper() const noexcept { return n_upper_; }
  std::size_t out_dim() const noexcept { return out_dim_; }
  std::size_t in_dim() const noexcept { return in_dim_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t r, std::size_t c) {
    return data_[((i * n_upper_ + j) * out_dim_ + r) * in_dim_ + c];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t r, std::size_t c) const {
    return data_[((i * n_upper_ + j) * out_dim_ + r) * in_dim_ + c];
  }

  std::span<const double> data() const noexcept { return data_; }

 private:
  std::size_t n_lower_, n_upper_, out_dim_, in_dim_;
  std::vector<double> data_;
};

enum class CoefficientKind { RawLogits, MaxMinNormalized, SoftmaxNormalized };

/// Routing coefficients c_ij or logits b_ij (n_lower x n_upper).
struct CoefficientMatrix {
  Matrix values;
  CoefficientKind kind = CoefficientKind::RawLogits;

  bool operator==(const CoefficientMatrix&) const = default;
};

/// Upper-level capsule vectors, one row per capsule (n_upper x dim). Holds
/// s_j before squashing and v_j after.
struct CapsuleOutputs {
  Matrix values;

  std::size_t n_upper() const noexcept { return values.rows(); }
  std::size_t dim() const noexcept { return values.cols(); }

  bool operator==(const CapsuleOutputs&) const = default;
};

inline double norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += a[k] * b[k];
  return sum;
}

}  // namespace capsroute
