#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qffn/error.hpp"

namespace qffn {

/// Dense row-major matrix of doubles. Vectors are stored as 1×n matrices.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data size " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                          const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

/// y = x·Wᵀ + b with W stored [out × in] and b [1 × out].
inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.cols()) throw ShapeError("linear: input width mismatch");
  require_shape(b, 1, w.rows(), "linear bias");
  Matrix y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    auto yi = y.row(i);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const auto wo = w.row(o);
      double acc = b(0, o);
      for (std::size_t k = 0; k < xi.size(); ++k) acc += xi[k] * wo[k];
      yi[o] = acc;
    }
  }
  return y;
}

/// Backward of `linear`. Accumulates into dw/db and returns dx.
inline Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy,
                              Matrix& dw, Matrix& db) {
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const auto dyi = dy.row(i);
    auto dxi = dx.row(i);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const double g = dyi[o];
      if (g == 0.0) continue;
      db(0, o) += g;
      auto dwo = dw.row(o);
      const auto wo = w.row(o);
      for (std::size_t k = 0; k < xi.size(); ++k) {
        dwo[k] += g * xi[k];
        dxi[k] += g * wo[k];
      }
    }
  }
  return dx;
}

}  // namespace qffn
