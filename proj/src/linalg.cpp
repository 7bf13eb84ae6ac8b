#include "peka/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "peka/error.hpp"

namespace peka {
namespace {

constexpr int kMaxSweeps = 60;

// One-sided Jacobi on the columns of `a` (m x n, m >= n). On return the columns
// of `a` are mutually orthogonal and `v` holds the accumulated rotations.
void hestenes(Matrix& a, Matrix& v) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  v = Matrix::identity(n);
  const double eps = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
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
}

// Fills columns [from, k) of `u` with unit vectors orthogonal to all earlier columns.
void complete_orthonormal(Matrix& u, std::size_t from) {
  const std::size_t m = u.rows();
  std::size_t candidate = 0;
  for (std::size_t col = from; col < u.cols(); ++col) {
    while (candidate < m) {
      std::vector<double> e(m, 0.0);
      e[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < col; ++j) {
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += u(i, j) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= d * u(i, j);
        }
      }
      const double nrm = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) u(i, col) = e[i] / nrm;
        break;
      }
    }
  }
}

ThinSvd svd_tall(const Matrix& x, std::size_t k) {
  Matrix a = x;
  Matrix v;
  hestenes(a, v);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return norms[l] > norms[r]; });

  ThinSvd out{Matrix(m, k), std::vector<double>(k), Matrix(n, k)};
  const double smax = n > 0 ? norms[order[0]] : 0.0;
  const double cutoff = std::max(smax * 1e-13, 1e-300);
  std::size_t filled = k;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t j = order[c];
    out.s[c] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, c) = v(i, j);
    if (norms[j] > cutoff) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, c) = a(i, j) / norms[j];
    } else if (filled == k) {
      filled = c;
    }
  }
  if (filled < k) {
    for (std::size_t c = filled; c < k; ++c) out.s[c] = 0.0;
    complete_orthonormal(out.u, filled);
  }
  return out;
}

}  // namespace

ThinSvd svd_thin(const Matrix& x, std::size_t k) {
  const std::size_t lim = std::min(x.rows(), x.cols());
  if (k == 0 || k > lim) {
    fail(ErrorCode::invalid_config, "svd_thin: k=" + std::to_string(k) + " out of range [1, " +
                                        std::to_string(lim) + "] for " + x.shape_string());
  }
  if (x.rows() >= x.cols()) return svd_tall(x, k);
  ThinSvd t = svd_tall(transpose(x), k);
  std::swap(t.u, t.v);
  return t;
}

Matrix cholesky_solve(const Matrix& a, const Matrix& b, double pivot_tol) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.rows() != n)
    fail(ErrorCode::shape_mismatch, "cholesky_solve: " + a.shape_string() + " vs rhs " + b.shape_string());
  double dmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) dmax = std::max(dmax, std::abs(a(i, i)));
  const double floor = pivot_tol * std::max(dmax, 1e-300);
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > floor)) fail(ErrorCode::numeric, "cholesky_solve: matrix is singular or not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

}  // namespace peka
