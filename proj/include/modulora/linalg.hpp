// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "modulora/matrix.hpp"

namespace modulora {

// Lower Cholesky factor L with A = L·Lᵀ. A must be symmetric positive
// definite; throws NumericError otherwise.
DenseMatrix cholesky_lower(const DenseMatrix& a);

// Inverse of an SPD matrix via its Cholesky factor. The result is
// symmetrized to clean up round-off.
DenseMatrix spd_inverse(const DenseMatrix& a);

// Upper-triangular U with A⁻¹ = Uᵀ·U, i.e. the transposed Cholesky factor of
// the inverse. This is the factor the OPTQ column sweep walks.
DenseMatrix upper_cholesky_of_inverse(const DenseMatrix& a);

}  // namespace modulora
