// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "modulora/errors.hpp"

namespace modulora {

SvdResult jacobi_svd(const DenseMatrix& a, int max_sweeps, double tol) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0 || n == 0) throw DimensionError("jacobi_svd: empty matrix");
  DenseMatrix g = a;                       // columns get orthogonalized
  DenseMatrix v = DenseMatrix::identity(n);  // accumulated rotations

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          app += g(i, p) * g(i, p);
          aqq += g(i, q) * g(i, q);
          apq += g(i, p) * g(i, q);
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) {
          continue;
        }
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double gp = g(i, p), gq = g(i, q);
          g(i, p) = c * gp - s * gq;
          g(i, q) = s * gp + c * gq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  SvdResult r;
  r.sigma.resize(n);
  r.u = DenseMatrix(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm += g(i, j) * g(i, j);
    norm = std::sqrt(norm);
    r.sigma[j] = norm;
    if (norm > 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, j) = g(i, j) / norm;
    }
  }
  // Sort descending by sigma (stable: ties keep column order).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x,
                                                   std::size_t y) {
    return r.sigma[x] > r.sigma[y];
  });
  SvdResult sorted;
  sorted.sigma.resize(n);
  sorted.u = DenseMatrix(m, n);
  sorted.v = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted.sigma[j] = r.sigma[order[j]];
    for (std::size_t i = 0; i < m; ++i) sorted.u(i, j) = r.u(i, order[j]);
    for (std::size_t i = 0; i < n; ++i) sorted.v(i, j) = v(i, order[j]);
  }
  return sorted;
}

std::pair<DenseMatrix, DenseMatrix> truncated_factors(const DenseMatrix& a,
                                                      std::size_t k) {
  if (k == 0 || k > a.cols()) {
    throw ConfigError("truncated_factors: rank must be in [1, cols]");
  }
  const SvdResult svd = jacobi_svd(a);
  DenseMatrix left(a.rows(), k);
  DenseMatrix right(k, a.cols());
  for (std::size_t j = 0; j < k; ++j) {
    const double root = std::sqrt(svd.sigma[j]);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      left(i, j) = svd.u(i, j) * root;
    }
    for (std::size_t i = 0; i < a.cols(); ++i) {
      right(j, i) = svd.v(i, j) * root;
    }
  }
  return {std::move(left), std::move(right)};
}

}  // namespace modulora
