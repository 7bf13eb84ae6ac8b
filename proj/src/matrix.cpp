#include "peka/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "peka/error.hpp"

namespace peka {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorCode::shape_mismatch, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return from_data(r, c, std::move(data));
}

Matrix Matrix::from_data(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (data.size() != rows * cols) {
    fail(ErrorCode::shape_mismatch, "matrix data length " + std::to_string(data.size()) +
                                        " does not match " + std::to_string(rows) + "x" +
                                        std::to_string(cols));
  }
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  if (!m.all_finite()) fail(ErrorCode::numeric, "matrix contains non-finite values");
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return from_data(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::shape_mismatch,
         std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::shape_mismatch,
         "matmul: shape mismatch " + a.shape_string() + " x " + b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.cols();
  const std::size_t m = b.cols();
  // i-k-j order; each output entry accumulates over k in ascending order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out = c.data().data() + i * m;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      const double* brow = b.data().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c = a;
  add_inplace(c, b);
  return c;
}

void add_inplace(Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = a.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix select_cols(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(a.rows(), idx.size());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = a(i, idx[j]);
  return out;
}

Matrix column_means(const Matrix& a) {
  Matrix m(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(0, j) += a(i, j);
  if (a.rows() > 0)
    for (double& v : m.data()) v /= static_cast<double>(a.rows());
  return m;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Matrix log_softmax_with_temperature(const Matrix& logits, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::invalid_config, "softmax temperature must be positive");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end()) / tau;
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += std::exp(in[j] / tau - mx);
    const double lz = std::log(z) + mx;
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] / tau - lz;
  }
  return out;
}

Matrix softmax_with_temperature(const Matrix& logits, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::invalid_config, "softmax temperature must be positive");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end()) / tau;
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] / tau - mx);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

double kl_divergence(const Matrix& p, const Matrix& q) {
  check_same_shape(p, q, "kl_divergence");
  if (p.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double ps = 0.0, qs = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      ps += p(i, j);
      qs += q(i, j);
    }
    if (std::abs(ps - 1.0) > 1e-9 || std::abs(qs - 1.0) > 1e-9)
      fail(ErrorCode::invalid_config, "kl_divergence: row " + std::to_string(i) + " is not stochastic");
    double row = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double pi = p(i, j);
      if (pi == 0.0) continue;
      const double qi = q(i, j);
      if (qi <= 0.0) {
        fail(ErrorCode::numeric, "kl_divergence: q is zero where p > 0 (row " + std::to_string(i) +
                                     ", col " + std::to_string(j) + "); divergence is infinite");
      }
      row += pi * std::log(pi / qi);
    }
    total += row;
  }
  return std::max(0.0, total / static_cast<double>(p.rows()));
}

}  // namespace peka
