// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "modulora/rng.hpp"

namespace modulora {

// Dense row-major f64 matrix. Library operations never mutate an input
// matrix; they build and return fresh values (gradient buffers, which are
// accumulators by design, are the one exception and live in the tape).
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix from(
      std::initializer_list<std::initializer_list<double>> rows);
  static DenseMatrix identity(std::size_t n);
  static DenseMatrix gaussian(std::size_t rows, std::size_t cols, Rng& rng,
                              double mean = 0.0, double stddev = 1.0);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t bytes() const { return data_.size() * sizeof(double); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  // Views borrow storage; calling them on a temporary would dangle.
  std::span<double> row(std::size_t i) & {
    return std::span<double>(data_).subspan(i * cols_, cols_);
  }
  std::span<const double> row(std::size_t i) const& {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  std::span<const double> row(std::size_t i) && = delete;

  std::span<double> data() & { return data_; }
  std::span<const double> data() const& { return data_; }
  std::span<const double> data() && = delete;

  bool same_shape(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  bool all_finite() const;

  // Element-wise += used by gradient accumulation. Shapes must match.
  void accumulate(const DenseMatrix& o);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Fixed i-k-j accumulation order: runs are bit-reproducible.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double c);

double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace modulora
