// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/linalg.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "modulora/errors.hpp"

namespace modulora {

DenseMatrix cholesky_lower(const DenseMatrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionError("cholesky: matrix must be square");
  }
  const std::size_t n = a.rows();
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) {
      throw NumericError("cholesky: matrix not positive definite at pivot " +
                         std::to_string(j));
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

DenseMatrix spd_inverse(const DenseMatrix& a) {
  const DenseMatrix l = cholesky_lower(a);
  const std::size_t n = a.rows();
  DenseMatrix inv(n, n);
  std::vector<double> y(n), x(n);
  for (std::size_t col = 0; col < n; ++col) {
    // Forward solve L·y = e_col.
    for (std::size_t i = 0; i < n; ++i) {
      double s = (i == col) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
      y[i] = s / l(i, i);
    }
    // Back solve Lᵀ·x = y.
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
      x[ii] = s / l(ii, ii);
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, col) = x[i];
  }
  // Symmetrize: the column solves agree only up to round-off.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = v;
      inv(j, i) = v;
    }
  }
  return inv;
}

DenseMatrix upper_cholesky_of_inverse(const DenseMatrix& a) {
  const DenseMatrix inv = spd_inverse(a);
  // inv = M·Mᵀ with M lower  =>  inv = Uᵀ·U with U = Mᵀ.
  return transpose(cholesky_lower(inv));
}

}  // namespace modulora
