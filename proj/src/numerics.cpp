#include "gstrs/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace gstrs {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require_same_dim(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error("dimension mismatch: " + std::to_string(x.size()) + " vs " +
                std::to_string(y.size()));
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error("matrix payload has " + std::to_string(data_.size()) + " values, expected " +
                std::to_string(rows * cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0) throw Error("empty matrix");
  if (values_.cols() == 0) throw Error("feature dimension must be at least 1");
  const auto v = values_.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error("non-finite feature at sample " + std::to_string(i / values_.cols()) +
                  ", dim " + std::to_string(i % values_.cols()));
    }
  }
}

FeatureMatrix FeatureMatrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) throw Error("empty matrix");
  const std::size_t dim = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * dim);
  for (const auto& r : rows) {
    if (r.size() != dim) throw Error("ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return FeatureMatrix(rows.size(), dim, std::move(data));
}

FeatureMatrix FeatureMatrix::select(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows()) throw Error("row index out of range");
    std::ranges::copy(row(indices[i]), out.row(i).begin());
  }
  return FeatureMatrix(std::move(out));
}

double dot(std::span<const double> x, std::span<const double> y) {
  require_same_dim(x, y);
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) s += x[d] * y[d];
  return s;
}

double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double squared_distance(std::span<const double> x, std::span<const double> y) {
  require_same_dim(x, y);
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - y[d];
    s += diff * diff;
  }
  return s;
}

Vector l2_normalize(std::span<const double> x) {
  const double n = norm(x);
  if (!(n > 0.0)) throw Error("zero norm");
  Vector out(x.begin(), x.end());
  for (auto& v : out) v /= n;
  return out;
}

bool all_finite(std::span<const double> x) {
  return std::ranges::all_of(x, [](double v) { return std::isfinite(v); });
}

PcaModel pca_fit(const FeatureMatrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  const std::size_t dim = features.dim();
  if (k == 0) throw Error("pca target dimension must be at least 1");
  if (k > dim) {
    throw Error("pca target dimension " + std::to_string(k) + " exceeds input dimension " +
                std::to_string(dim));
  }
  if (n < 2) throw Error("pca needs at least 2 samples");

  PcaModel model;
  model.mean.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = features.row(i);
    for (std::size_t d = 0; d < dim; ++d) model.mean[d] += r[d];
  }
  for (auto& m : model.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd centered(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = features.row(i);
    for (std::size_t d = 0; d < dim; ++d) centered(d) = r[d] - model.mean[d];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);

  // Eigenvalues come back ascending.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("covariance eigendecomposition failed");
  const Eigen::VectorXd& evals = solver.eigenvalues();
  const Eigen::MatrixXd& evecs = solver.eigenvectors();

  const double top = std::max(evals(dim - 1), 0.0);
  const double zero_tol = 1e-12 * std::max(top, 1.0);

  model.components = Matrix(k, dim);
  model.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index src = static_cast<Eigen::Index>(dim - 1 - c);
    const double lambda = std::max(evals(src), 0.0);
    model.explained_variance[c] = lambda;
    if (lambda <= zero_tol) model.rank_deficient = true;

    std::size_t pivot = 0;
    for (std::size_t d = 1; d < dim; ++d) {
      if (std::abs(evecs(d, src)) > std::abs(evecs(pivot, src))) pivot = d;
    }
    const double sign = evecs(pivot, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t d = 0; d < dim; ++d) model.components(c, d) = sign * evecs(d, src);
  }
  return model;
}

FeatureMatrix pca_transform(const PcaModel& model, const FeatureMatrix& features) {
  if (features.dim() != model.dim()) {
    throw Error("dimension mismatch: features have " + std::to_string(features.dim()) +
                ", pca model expects " + std::to_string(model.dim()));
  }
  Matrix out(features.rows(), model.k());
  Vector centered(model.dim());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto r = features.row(i);
    for (std::size_t d = 0; d < model.dim(); ++d) centered[d] = r[d] - model.mean[d];
    for (std::size_t c = 0; c < model.k(); ++c) out(i, c) = dot(model.components.row(c), centered);
  }
  return FeatureMatrix(std::move(out));
}

}  // namespace gstrs
