#pragma once

#include <cstddef>
#include <vector>

#include "peka/matrix.hpp"

namespace peka {

struct ThinSvd {
  Matrix u;               // rows x k, orthonormal columns
  std::vector<double> s;  // k values, non-increasing
  Matrix v;               // cols x k, orthonormal columns
};

/// Top-k singular triplets via one-sided Jacobi on the smaller Gram dimension.
ThinSvd svd_thin(const Matrix& x, std::size_t k);

/// Solves A X = B for symmetric positive definite A via Cholesky.
/// Throws ErrorCode::numeric when a pivot falls below `pivot_tol * max(diag(A))`.
Matrix cholesky_solve(const Matrix& a, const Matrix& b, double pivot_tol = 1e-12);

}  // namespace peka
