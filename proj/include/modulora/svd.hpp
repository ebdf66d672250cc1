// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "modulora/matrix.hpp"

namespace modulora {

// a = u * diag(sigma) * v^T, sigma sorted descending.
struct SvdResult {
  DenseMatrix u;              // [m x n]
  std::vector<double> sigma;  // n values, >= 0
  DenseMatrix v;              // [n x n]
};

// One-sided Jacobi: iteratively orthogonalizes column pairs. Deterministic
// (fixed sweep order); fine for the small matrices used here.
SvdResult jacobi_svd(const DenseMatrix& a, int max_sweeps = 60,
                     double tol = 1e-12);

// Balanced factors of the best rank-k approximation:
//   left [m x k] = U_k sqrt(S_k),  right [k x n] = sqrt(S_k) V_k^T.
std::pair<DenseMatrix, DenseMatrix> truncated_factors(const DenseMatrix& a,
                                                      std::size_t k);

}  // namespace modulora
