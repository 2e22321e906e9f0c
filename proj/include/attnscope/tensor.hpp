#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attnscope/error.hpp"

namespace attnscope {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows_, cols_));
    }
  }

  /// Builds a matrix from nested rows; all rows must have equal length.
  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) throw ShapeError("ragged rows in from_rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  /// Columns [begin, begin + count) as a new rows × count matrix.
  Matrix column_slice(std::size_t begin, std::size_t count) const {
    if (begin + count > cols_) {
      throw ShapeError("column slice [" + std::to_string(begin) + ", " +
                       std::to_string(begin + count) + ") exceeds " +
                       shape_string(rows_, cols_));
    }
    Matrix out(rows_, count);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < count; ++j) out(i, j) = (*this)(i, begin + j);
    return out;
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape() + " by " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  // i-k-j order keeps the inner loop contiguous in both b and out.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

/// Adds `bias` to every row of `m` in place.
inline void add_row_bias(Matrix& m, std::span<const double> bias) {
  if (bias.size() != m.cols()) {
    throw ShapeError("bias length " + std::to_string(bias.size()) +
                     " does not match matrix " + m.shape());
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

inline void add_in_place(Matrix& dst, const Matrix& src) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
    throw ShapeError("elementwise add shape mismatch: " + dst.shape() + " and " +
                     src.shape());
  }
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline void softmax_in_place(std::span<double> row) {
  if (row.empty()) return;
  const double max = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - max);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

/// Row-wise softmax with per-row max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "softmax_rows: non-finite input");
  }
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_in_place(out.row(i));
  return out;
}

/// ((x - mean) / sqrt(var + eps)) * gamma + beta, population variance.
inline std::vector<double> layer_norm(std::span<const double> x,
                                      std::span<const double> gamma,
                                      std::span<const double> beta, double eps) {
  if (x.size() != gamma.size() || x.size() != beta.size()) {
    throw ShapeError("layer_norm length mismatch: x=" + std::to_string(x.size()) +
                     " gamma=" + std::to_string(gamma.size()) +
                     " beta=" + std::to_string(beta.size()));
  }
  if (!(eps > 0.0)) throw Error(ErrorCode::invalid_argument, "layer_norm: eps must be > 0");
  if (x.empty()) return {};
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
  return out;
}

/// Applies layer_norm to each row of `m`.
inline Matrix layer_norm_rows(const Matrix& m, std::span<const double> gamma,
                              std::span<const double> beta, double eps) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto normed = layer_norm(m.row(i), gamma, beta, eps);
    std::copy(normed.begin(), normed.end(), out.row(i).begin());
  }
  return out;
}

/// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace attnscope
