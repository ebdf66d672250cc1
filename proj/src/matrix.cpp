// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "modulora/errors.hpp"

namespace modulora {

namespace {

std::string shape_str(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b,
                        const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("DenseMatrix: data length " +
                         std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "*" + std::to_string(cols));
  }
}

DenseMatrix DenseMatrix::from(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  DenseMatrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw DimensionError("DenseMatrix::from: ragged rows");
    }
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::gaussian(std::size_t rows, std::size_t cols, Rng& rng,
                                  double mean, double stddev) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.gaussian(mean, stddev);
  return m;
}

bool DenseMatrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void DenseMatrix::accumulate(const DenseMatrix& o) {
  require_same_shape(*this, o, "accumulate");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dims " + shape_str(a) + " * " +
                         shape_str(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  DenseMatrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < n; ++j) {
        out(i, j) += aip * b(p, j);
      }
    }
  }
  return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(j, i) = a(i, j);
    }
  }
  return out;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "add");
  DenseMatrix out = a;
  out.accumulate(b);
  return out;
}

DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "sub");
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.data()[i] = a.data()[i] - b.data()[i];
  }
  return out;
}

DenseMatrix scale(const DenseMatrix& a, double c) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  return out;
}

double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace modulora
