#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gstrs {

using Vector = std::vector<double>;
using Rng = std::mt19937_64;

/// Raised on any malformed input to a toolkit operation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RngSeed {
  std::uint64_t value = 0;
};

/// Mixes a base seed with stream identifiers (splitmix64 finalizer) so that
/// independent consumers (per class, per restart, per epoch) get independent
/// generators from one user seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

inline Rng make_rng(std::uint64_t base, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(base, a, b));
}

/// Dense row-major matrix. Used for parameters and scratch buffers.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Immutable sample x dimension matrix of finite features. Row i is sample i.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  /// Throws if empty or if any entry is NaN/Inf.
  explicit FeatureMatrix(Matrix values);
  FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<double> data)
      : FeatureMatrix(Matrix(rows, dim, std::move(data))) {}

  static FeatureMatrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return values_.rows(); }
  std::size_t dim() const { return values_.cols(); }
  bool empty() const { return values_.rows() == 0; }
  std::span<const double> row(std::size_t i) const { return values_.row(i); }
  const Matrix& matrix() const { return values_; }

  /// Rows picked by index, in the order given.
  FeatureMatrix select(std::span<const std::size_t> indices) const;

  bool operator==(const FeatureMatrix&) const = default;

 private:
  Matrix values_;
};

double dot(std::span<const double> x, std::span<const double> y);
double norm(std::span<const double> x);
double squared_distance(std::span<const double> x, std::span<const double> y);
/// Throws Error("zero norm") for the zero vector.
Vector l2_normalize(std::span<const double> x);
bool all_finite(std::span<const double> x);

struct PcaModel {
  Vector mean;
  Matrix components;  // k x dim, orthonormal rows, descending variance
  Vector explained_variance;
  /// Set when some retained component has (numerically) zero variance; those
  /// directions are an arbitrary orthonormal completion.
  bool rank_deficient = false;

  std::size_t k() const { return components.rows(); }
  std::size_t dim() const { return components.cols(); }
};

PcaModel pca_fit(const FeatureMatrix& features, std::size_t k);
FeatureMatrix pca_transform(const PcaModel& model, const FeatureMatrix& features);

}  // namespace gstrs
