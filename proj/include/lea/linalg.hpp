#pragma once

// Numerical rank over token-vector matrices via an incremental orthonormal
// basis (modified Gram-Schmidt, two projection passes).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lea/error.hpp"

namespace lea {

struct ToleranceConfig {
  double relative_residual = 1e-5;
  double absolute_floor = 1e-12;

  void validate() const {
    if (!(relative_residual > 0.0 && relative_residual < 1.0))
      throw validation_error("relative_residual must lie in (0,1)", "tolerance");
    if (!(absolute_floor >= 0.0) || !std::isfinite(absolute_floor))
      throw validation_error("absolute_floor must be finite and >= 0", "tolerance");
    if (!(relative_residual > absolute_floor))
      throw validation_error("relative_residual must exceed absolute_floor", "tolerance");
  }

  friend bool operator==(const ToleranceConfig&, const ToleranceConfig&) = default;
};

/// L x d matrix of per-token vectors at one layer, row-major, stored at the
/// precision it was ingested with.
class HiddenStateMatrix {
 public:
  HiddenStateMatrix() = default;

  HiddenStateMatrix(std::size_t rows, std::size_t dim, std::vector<float> data, int layer_index = 0)
      : rows_(rows), dim_(dim), data_(std::move(data)), layer_index_(layer_index) {
    if (dim_ == 0) throw schema_error("hidden state dim must be >= 1");
    if (data_.size() != rows_ * dim_)
      throw schema_error("hidden state data has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(rows_ * dim_));
    if (layer_index_ < 0) throw schema_error("layer index must be >= 0");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  int layer_index() const noexcept { return layer_index_; }
  std::span<const float> data() const noexcept { return data_; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  /// Throws a validation error naming the first non-finite coordinate.
  void validate() const {
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < dim_; ++j)
        if (!std::isfinite(data_[i * dim_ + j]))
          throw validation_error("non-finite hidden state value",
                                 "row " + std::to_string(i) + ", col " + std::to_string(j));
  }

  /// Rows [first, last) as a new matrix on the same layer.
  HiddenStateMatrix slice_rows(std::size_t first, std::size_t last) const {
    if (first > last || last > rows_) throw schema_error("row slice out of range");
    return {last - first, dim_,
            std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(first * dim_),
                               data_.begin() + static_cast<std::ptrdiff_t>(last * dim_)),
            layer_index_};
  }

  friend bool operator==(const HiddenStateMatrix&, const HiddenStateMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 1;
  std::vector<float> data_;
  int layer_index_ = 0;
};

/// Orthonormal basis grown one candidate vector at a time. Accumulates in
/// double regardless of the candidate's precision.
class OrthoBasis {
 public:
  explicit OrthoBasis(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw schema_error("basis dim must be >= 1");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t rank() const noexcept { return vectors_.size() / dim_; }

  std::span<const double> vector(std::size_t k) const { return {vectors_.data() + k * dim_, dim_}; }

  /// Projects `v` out of the current span (twice). Appends the normalized
  /// residual and returns true iff the residual norm exceeds
  /// relative_residual * max(|v|, absolute_floor). Vectors with
  /// |v| <= absolute_floor are reported dependent.
  template <class Real>
  bool insert(std::span<const Real> v, const ToleranceConfig& tol) {
    double res = 0.0;
    if (!project(v, tol, residual_, res)) return false;
    for (double x : residual_) vectors_.push_back(x / res);
    return true;
  }

  /// Same test as insert() without growing the basis.
  template <class Real>
  bool independent(std::span<const Real> v, const ToleranceConfig& tol) const {
    std::vector<double> scratch;
    double res = 0.0;
    return project(v, tol, scratch, res);
  }

  template <class Real>
  bool insert(const std::vector<Real>& v, const ToleranceConfig& tol) {
    return insert(std::span<const Real>(v), tol);
  }

  /// Largest |<q_i, q_j> - [i == j]| over the basis.
  double orthonormality_error() const {
    double worst = 0.0;
    for (std::size_t a = 0; a < rank(); ++a)
      for (std::size_t b = a; b < rank(); ++b) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) dot += vectors_[a * dim_ + j] * vectors_[b * dim_ + j];
        worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }
    return worst;
  }

 private:
  template <class Real>
  bool project(std::span<const Real> v, const ToleranceConfig& tol, std::vector<double>& residual,
               double& res) const {
    if (v.size() != dim_)
      throw schema_error("vector length " + std::to_string(v.size()) + " does not match basis dim " +
                         std::to_string(dim_));
    residual.assign(v.begin(), v.end());
    const double norm_v = norm(residual);
    if (!std::isfinite(norm_v)) throw validation_error("non-finite vector passed to basis");
    if (norm_v <= tol.absolute_floor) return false;

    const std::size_t r = rank();
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < r; ++k) {
        const double* q = vectors_.data() + k * dim_;
        double c = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) c += q[j] * residual[j];
        for (std::size_t j = 0; j < dim_; ++j) residual[j] -= c * q[j];
      }
    }

    res = norm(residual);
    const double threshold = tol.relative_residual * std::max(norm_v, tol.absolute_floor);
    return res > threshold && r < dim_;
  }

  static double norm(const std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    return std::sqrt(s);
  }

  std::size_t dim_;
  std::vector<double> vectors_;
  std::vector<double> residual_;  // scratch
};

struct InsertResult {
  OrthoBasis basis;
  bool increased;
};

/// Value-semantics form of OrthoBasis::insert.
template <class Real>
InsertResult basis_try_insert(OrthoBasis basis, std::span<const Real> v, const ToleranceConfig& tol) {
  const bool increased = basis.insert(v, tol);
  return {std::move(basis), increased};
}

/// Rank of a row-major rows x dim block: rows are accepted in order when
/// their residual against the previously accepted rows passes the tolerance.
template <class Real>
std::size_t numerical_rank(std::span<const Real> data, std::size_t rows, std::size_t dim,
                           const ToleranceConfig& tol = {}) {
  if (dim == 0) throw schema_error("matrix dim must be >= 1");
  if (data.size() != rows * dim) throw schema_error("matrix data size does not match rows x dim");
  for (std::size_t k = 0; k < data.size(); ++k)
    if (!std::isfinite(static_cast<double>(data[k])))
      throw validation_error("non-finite matrix value",
                             "row " + std::to_string(k / dim) + ", col " + std::to_string(k % dim));
  OrthoBasis basis(dim);
  for (std::size_t i = 0; i < rows && basis.rank() < dim; ++i) (void)basis.insert(data.subspan(i * dim, dim), tol);
  return basis.rank();
}

inline std::size_t numerical_rank(const HiddenStateMatrix& m, const ToleranceConfig& tol = {}) {
  return numerical_rank(m.data(), m.rows(), m.dim(), tol);
}

}  // namespace lea
